mod common;

use std::sync::OnceLock;

use cuspform::eikonal::{evolve_to_stop, initialize_from_states, Perturbation, PerturbationTerm, SolverConfig, Trajectory};
use cuspform::mghd::{
    lambda_star, mu_star, mu_star_brute_force, trace_characteristic, CausalConfig, Direction, FrameSet,
};
use cuspform::numerics::UniformGrid;
use common::{burgers, burgers_wave, evolve, solver};
use proptest::prelude::*;

/// Burgers data `v = 2 - x`, so `mu = 1 - tau` everywhere.
fn linear_run() -> &'static (Trajectory, CausalConfig) {
    static RUN: OnceLock<(Trajectory, CausalConfig)> = OnceLock::new();
    RUN.get_or_init(|| {
        let system = burgers();
        let grid = UniformGrid::spanning(-1.5, 1.5, 301);
        let init = initialize_from_states(&system, grid, |x| vec![2.0 - x, 0.0]).unwrap();
        let config = SolverConfig { tau_step: 5e-3, tau_max: 0.6, record_every: 1, ..SolverConfig::default() };
        let trajectory = evolve_to_stop(&system, init, &config).unwrap();
        let causal = CausalConfig {
            center: 0.0,
            eta: 0.1,
            delta1: 0.2,
            lambda_star: 3.0,
            base_level: 0.2,
            t_box: 0.5,
            ..CausalConfig::default()
        };
        (trajectory, causal)
    })
}

const MU_STOP: f64 = 1e-3;

fn burgers_run() -> &'static (Trajectory, CausalConfig) {
    static RUN: OnceLock<(Trajectory, CausalConfig)> = OnceLock::new();
    RUN.get_or_init(|| {
        let wave = burgers_wave();
        let causal = CausalConfig::from_condition(wave.min_location(), 0.1, 0.7, 0.1, lambda_star(&wave).unwrap(), MU_STOP).unwrap();
        let config = causal.solver_settings(&solver(256, MU_STOP), 50);
        let p = Perturbation::new(vec![PerturbationTerm { component: 1, center: 0.0, width: 0.5, amplitude: 1.0 }]);
        (evolve(&wave, &p, 1e-3, &config), causal)
    })
}

#[test]
fn linear_data_has_uniform_mu() {
    let (trajectory, _) = linear_run();
    for frame in &trajectory.frames {
        for (j, m) in frame.mu.iter().enumerate() {
            if frame.grid.node(j).abs() <= 0.8 {
                assert!((m - (1.0 - frame.tau)).abs() < 1e-9, "mu {m} at tau {}", frame.tau);
            }
        }
    }
}

#[test]
fn mu_star_equals_mu_when_mu_is_spatially_constant() {
    let (trajectory, causal) = linear_run();
    let frames = FrameSet::new(trajectory).unwrap();
    for k in 0..10 {
        let u = -0.25 + 0.05 * k as f64;
        let tau = causal.base_time(u) + 0.5 * (causal.t_box - causal.base_time(u));
        let fast = mu_star(&frames, causal, (tau, u)).unwrap();
        let brute = mu_star_brute_force(&frames, causal, (tau, u)).unwrap();
        assert!(fast.certified && !fast.fallback);
        assert!((fast.value - (1.0 - tau)).abs() < 1e-9, "{} vs {}", fast.value, 1.0 - tau);
        assert!((brute.value - (1.0 - tau)).abs() < 1e-9);
        assert!((brute.max_rate + 1.0).abs() < 1e-6);
    }
}

#[test]
fn transport_characteristic_moves_left_at_unit_speed() {
    let (trajectory, causal) = linear_run();
    let frames = FrameSet::new(trajectory).unwrap();
    let start = (0.45, 0.05);
    let curve = trace_characteristic(&frames, causal, 0, start, Direction::Past).unwrap();
    assert!(curve.len() > 2);
    let first = curve[0];
    let last = curve[curve.len() - 1];
    assert!((last.tau - causal.base_time(last.u)).abs() < 1e-6, "curve ends at {last:?}");
    for s in &curve {
        assert!((s.x - (first.x + (first.tau - s.tau))).abs() < 1e-6, "{s:?}");
    }
}

#[test]
fn shock_characteristic_keeps_its_label() {
    let (trajectory, causal) = linear_run();
    let frames = FrameSet::new(trajectory).unwrap();
    let curve = trace_characteristic(&frames, causal, 1, (0.45, -0.1), Direction::Past).unwrap();
    assert!(curve.iter().all(|s| s.u == -0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mu_star_is_bounded_by_mu(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (trajectory, causal) = burgers_run();
        let frames = FrameSet::new(trajectory).unwrap();
        let reach = causal.eta + causal.delta1;
        let u = causal.center - reach + 2.0 * reach * a;
        let tau = causal.base_time(u) + (causal.t_box - causal.base_time(u)) * b;
        let star = mu_star(&frames, causal, (tau, u)).unwrap();
        prop_assert!(star.value <= frames.mu(tau, u) + 1e-12);
        prop_assert!(star.truncated <= star.value);
    }

    #[test]
    fn mu_star_decreases_along_columns(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let (trajectory, causal) = burgers_run();
        let frames = FrameSet::new(trajectory).unwrap();
        let reach = causal.eta + causal.delta1;
        let u = causal.center - reach + 2.0 * reach * a;
        let base = causal.base_time(u);
        let (lo, hi) = if b < c { (b, c) } else { (c, b) };
        let early = mu_star(&frames, causal, (base + (causal.t_box - base) * lo, u)).unwrap();
        let late = mu_star(&frames, causal, (base + (causal.t_box - base) * hi, u)).unwrap();
        prop_assume!(late.value > 10.0 * MU_STOP);
        prop_assert!(late.value <= early.value + 1e-9, "{} > {}", late.value, early.value);
    }
}
