mod common;

use cuspform::eikonal::Perturbation;
use cuspform::preshock::detect_preshock;
use common::{burgers_wave, evolve, solver};

#[test]
fn unperturbed_evolution_matches_closed_form() {
    let wave = burgers_wave();
    let trajectory = evolve(&wave, &Perturbation::default(), 0.0, &solver(512, 1e-3));
    let mut mu_err: f64 = 0.0;
    let mut x_err: f64 = 0.0;
    for frame in trajectory.pre_stop_frames() {
        for j in 0..frame.len() {
            let u = frame.grid.node(j);
            mu_err = mu_err.max((frame.mu[j] - wave.mu_exact(frame.tau, u)).abs());
            x_err = x_err.max((frame.x[j] - wave.x_exact(frame.tau, u)).abs());
        }
    }
    assert!(mu_err < 5e-6, "mu error {mu_err:e}");
    assert!(x_err < 5e-6, "x error {x_err:e}");
}

#[test]
fn first_shock_at_unit_time_above_the_compression_peak() {
    let wave = burgers_wave();
    let config = solver(512, 1e-4);
    let trajectory = evolve(&wave, &Perturbation::default(), 0.0, &config);
    let location = detect_preshock(&trajectory, 0.01).unwrap();
    let h = trajectory.frames[0].grid.step;
    assert!((location.t_star - 1.0).abs() < 1e-4, "t* = {}", location.t_star);
    assert!((location.u0 - wave.min_location()).abs() < 2.0 * h);
    assert_eq!(wave.shock_time(), 1.0);
}

#[test]
fn exact_state_is_transported_along_characteristics() {
    let wave = burgers_wave();
    for k in 0..20 {
        let u = -1.5 + 0.15 * k as f64;
        let t = 0.9;
        let x = wave.x_exact(t, u);
        assert!((wave.foot(t, x) - u).abs() < 1e-9);
        let state = wave.evaluate(t, x);
        let initial = wave.state_at_label(u);
        assert!((state[0] - initial[0]).abs() < 1e-9);
    }
}

#[test]
fn transversal_perturbation_stays_small() {
    let wave = burgers_wave();
    let p = Perturbation::new(vec![cuspform::eikonal::PerturbationTerm { component: 1, center: 0.0, width: 0.5, amplitude: 1.0 }]);
    let trajectory = evolve(&wave, &p, 1e-3, &solver(256, 1e-2));
    let last = trajectory.stop_frame();
    let sup = last.transversal.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(sup > 0.0 && sup < 1e-2, "transversal sup {sup:e}");
}
