use cuspform::spectral::{eigendecompose, SpectralConfig};
use cuspform::systems::{builtin_system, GaugeParams, SystemParams};
use proptest::prelude::*;

const NAMES: [&str; 3] = ["burgers_transport", "p_system", "synthetic3_intermediate"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shear_shifts_speeds_and_keeps_eigenvectors(which in 0usize..3, seed in 0u64..1000, v in -3.0f64..3.0) {
        let system = builtin_system(NAMES[which], &SystemParams::default()).unwrap();
        let sheared = system.galilean_transform(&GaugeParams { t0: 0.0, x0: 0.0, v });
        let cfg = SpectralConfig::default();
        for state in system.sample_states(5, seed) {
            let a = eigendecompose(&system, &state, &cfg).unwrap();
            let b = eigendecompose(&sheared, &state, &cfg).unwrap();
            for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
                prop_assert!((x - v - y).abs() < 1e-10);
            }
            prop_assert!((a.right - b.right).abs().max() < 1e-10);
        }
    }

    #[test]
    fn gauge_inverse_round_trips(t0 in -2.0f64..2.0, x0 in -2.0f64..2.0, v in -3.0f64..3.0, t in -5.0f64..5.0, x in -5.0f64..5.0) {
        let g = GaugeParams { t0, x0, v };
        let (tb, xb) = g.apply(t, x);
        let (t1, x1) = g.invert(tb, xb);
        prop_assert!((t1 - t).abs() < 1e-12 && (x1 - x).abs() < 1e-12);
    }
}

#[test]
fn sampled_states_stay_in_the_box() {
    for name in NAMES {
        let system = builtin_system(name, &SystemParams::default()).unwrap();
        assert!(system.sample_states(200, 3).iter().all(|s| system.contains(s)));
    }
}
