use cuspform::cusp::monotone_cubic_root;
use cuspform::systems::GaugeParams;
use cuspform::Cusp;
use proptest::prelude::*;

fn model(a0: f64, b0: f64) -> Cusp {
    Cusp::new(a0, b0, GaugeParams::identity()).unwrap()
}

#[test]
fn hand_checked_cusp_values() {
    let m = model(1.0, 1.0);
    // x = U + U^3 at t = -1: U = 1 gives x = 2, U = 2 gives x = 10.
    assert!((m.eval(-1.0, 10.0).unwrap().label - 2.0).abs() < 1e-14);
    assert!((m.eval(-1.0, -2.0).unwrap().label + 1.0).abs() < 1e-14);
    // At t = 0 the cusp is a cube root: 2 U^3 = 54 gives U = 3.
    assert!((model(5.0, 2.0).eval(0.0, 54.0).unwrap().label - 3.0).abs() < 1e-13);
}

proptest! {
    #[test]
    fn cubic_root_residual(cubic in 0.01f64..100.0, linear in 0.0f64..100.0, rhs in -100.0f64..100.0) {
        let y = monotone_cubic_root(cubic, linear, rhs);
        prop_assert!((cubic * y * y * y + linear * y - rhs).abs() <= 1e-10);
        prop_assert!(y * rhs >= 0.0);
    }

    #[test]
    fn label_is_one_homogeneous(a0 in 0.1f64..5.0, b0 in 0.05f64..5.0, t in -2.0f64..0.0, x in -2.0f64..2.0, s in 0.25f64..4.0) {
        let m = model(a0, b0);
        let base = m.eval(t, x).unwrap();
        let scaled = m.eval(s * s * t, s * s * s * x).unwrap();
        prop_assert!((scaled.label - s * base.label).abs() <= 1e-12 * s.max(1.0) * base.label.abs().max(1.0));
        prop_assert!((scaled.distance - s * base.distance).abs() <= 1e-12 * s.max(1.0) * base.distance.max(1.0));
    }

    #[test]
    fn density_and_distance_identities(a0 in 0.1f64..5.0, b0 in 0.05f64..5.0, t in -2.0f64..-1e-3, x in -2.0f64..2.0) {
        let m = model(a0, b0);
        let p = m.eval(t, x).unwrap();
        prop_assert!((p.density * p.distance * p.distance - 1.0).abs() <= 1e-10);
        prop_assert!((t + 1.0 / (a0 * p.density) - 3.0 * b0 * p.label * p.label / a0).abs() <= 1e-10);
        prop_assert!(m.residual(t, x, p.label).abs() <= 1e-10);
    }

    #[test]
    fn label_is_odd_and_increasing(a0 in 0.1f64..5.0, b0 in 0.05f64..5.0, t in -2.0f64..0.0, x in 0.0f64..2.0, dx in 1e-6f64..1.0) {
        let m = model(a0, b0);
        let here = m.eval(t, x).unwrap().label;
        prop_assert_eq!(m.eval(t, -x).unwrap().label, -here);
        prop_assert!(m.eval(t, x + dx).unwrap().label > here);
    }
}

#[test]
fn derivative_identities_converge_at_second_order() {
    let m = model(1.3, 0.4);
    for &(t, x) in &[(-0.5, 0.3), (-1.0, -0.7), (-0.2, 1.1)] {
        let p = m.eval(t, x).unwrap();
        let label = |t: f64, x: f64| m.eval(t, x).unwrap().label;
        let error = |h: f64| {
            let dx = (label(t, x + h) - label(t, x - h)) / (2.0 * h);
            let dt = (label(t + h, x) - label(t - h, x)) / (2.0 * h);
            ((dx - p.density).abs(), (dt - m.a0 * p.label * p.density).abs())
        };
        let (c, f) = (error(1e-2), error(5e-3));
        for (coarse, fine) in [(c.0, f.0), (c.1, f.1)] {
            let order = (coarse / fine).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order} at ({t}, {x})");
        }
    }
}
