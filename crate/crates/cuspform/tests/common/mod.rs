#![allow(dead_code)]

use cuspform::eikonal::{evolve_to_stop, initialize, Perturbation, SolverConfig, Trajectory};
use cuspform::simplewave::{build_simple_wave, integrate_state_curve, BumpTerm, SimpleWave, ThetaProfile};
use cuspform::systems::{builtin_system, SystemDefinition, SystemParams};

pub fn burgers() -> SystemDefinition {
    builtin_system("burgers_transport", &SystemParams::default()).unwrap()
}

/// Burgers wave whose normalized slope is `-1 + y^2 / 2 - y^3 / 10` near its minimum.
pub fn burgers_wave() -> SimpleWave {
    wave_with(vec![BumpTerm { weight: 1.0, center: 0.0, width: 2.0, shape: 0.5, skew: 0.1 }])
}

pub fn wave_with(terms: Vec<BumpTerm>) -> SimpleWave {
    let system = burgers();
    let curve = integrate_state_curve(&system, &[2.0, 0.0], 1.5, 0.01).unwrap();
    build_simple_wave(&system, curve, ThetaProfile::new(terms), true).unwrap()
}

pub fn solver(grid_points: usize, mu_stop: f64) -> SolverConfig {
    SolverConfig { grid_points, tau_step: 1e-3, mu_stop, margin: Some(1.0), ..SolverConfig::default() }
}

pub fn evolve(wave: &SimpleWave, perturbation: &Perturbation, epsilon: f64, config: &SolverConfig) -> Trajectory {
    let init = initialize(wave, perturbation, epsilon, config).unwrap();
    evolve_to_stop(wave.system(), init, config).unwrap()
}
