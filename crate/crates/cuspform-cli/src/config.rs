//! Experiment configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cuspform::eikonal::{Perturbation, SolverConfig};
use cuspform::mghd::PerverseConfig;
use cuspform::preshock::{FitWindow, ShellConfig};
use cuspform::simplewave::{BumpTerm, MildParams};
use cuspform::systems::{builtin_system, SystemParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemSection,
    pub wave: WaveSection,
    /// Galilean shear velocity applied to the whole problem; outputs are mapped back.
    #[serde(default)]
    pub shear: f64,
    #[serde(default)]
    pub perturbation: Perturbation,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub fit: Option<FitSection>,
    #[serde(default)]
    pub mghd: Option<MghdSection>,
    #[serde(default)]
    pub perverse: Option<PerverseSection>,
    #[serde(default)]
    pub checks: CheckSection,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub params: SystemParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSection {
    /// State at `theta = 0`.
    pub anchor: Vec<f64>,
    /// Half-length of the integral curve in its parameter.
    pub half_length: f64,
    #[serde(default = "default_curve_step")]
    pub curve_step: f64,
    pub terms: Vec<BumpTerm>,
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Confinement parameters; checked for intermediate shocking fields.
    #[serde(default)]
    pub confinement: Option<MildParams>,
}

fn default_curve_step() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Runs the fit on the rung with this amplitude.
    pub epsilon: f64,
    pub preshock_margin: f64,
    pub window: FitWindow,
    pub shells: ShellConfig,
    pub corrector_shell: (f64, f64),
    /// Expected quadratic coefficient, when known in closed form.
    pub expected_b0: Option<f64>,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            preshock_margin: 0.01,
            window: FitWindow::default(),
            shells: ShellConfig::default(),
            corrector_shell: (0.05, 0.1),
            expected_b0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldPosition {
    Extremal,
    Intermediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MghdSection {
    pub epsilon: f64,
    pub eta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub grid_points: usize,
    pub tau_step: f64,
    pub mu_stop: f64,
    /// Solver steps across the box.
    pub refined_steps: usize,
    pub margin: Option<f64>,
    /// Characteristic tracing step as a fraction of the grid step.
    pub trace_fraction: f64,
    pub expect: FieldPosition,
    /// Random points for the `mu*` cross-check.
    pub oracle_points: usize,
}

impl Default for MghdSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            eta: 0.1,
            delta1: 0.7,
            delta2: 0.1,
            grid_points: 1024,
            tau_step: 1e-3,
            mu_stop: 1e-4,
            refined_steps: 200,
            margin: Some(1.0),
            trace_fraction: 0.5,
            expect: FieldPosition::Extremal,
            oracle_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerverseSection {
    pub n_max: usize,
    pub config: PerverseConfig,
}

impl Default for PerverseSection {
    fn default() -> Self {
        Self { n_max: 3, config: PerverseConfig::default() }
    }
}

/// Tolerances of the pass/fail checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub t_star_tol: f64,
    /// Allowed spread (max/min) of `|t* - 1| / eps` over the perturbed rungs.
    pub linear_spread: f64,
    pub a0_tol: f64,
    pub b0_tol: f64,
    pub shell_spread: f64,
    pub state_coefficient_tol: f64,
    pub oracle_tol: f64,
    pub lipschitz_factor: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            t_star_tol: 1e-4,
            linear_spread: 2.0,
            a0_tol: 1e-3,
            b0_tol: 1e-2,
            shell_spread: 2.0,
            state_coefficient_tol: 0.05,
            oracle_tol: 1e-6,
            lipschitz_factor: 1.1,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field and position.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            anyhow::anyhow!("config field `{path}`: {inner}")
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let system = builtin_system(&self.system.name, &self.system.params)
            .with_context(|| format!("config field `system.name`: cannot build `{}`", self.system.name))?;
        if self.wave.anchor.len() != system.dim() {
            bail!("config field `wave.anchor`: expected {} components, got {}", system.dim(), self.wave.anchor.len());
        }
        if self.wave.terms.is_empty() {
            bail!("config field `wave.terms`: at least one term is required");
        }
        if self.epsilons.is_empty() {
            bail!("config field `epsilons`: at least one amplitude is required");
        }
        if let Some(k) = self.epsilons.iter().position(|e| !(*e >= 0.0)) {
            bail!("config field `epsilons[{k}]`: amplitudes must be non-negative");
        }
        if let Some(term) = self.perturbation.terms.iter().find(|t| t.component >= system.dim()) {
            bail!("config field `perturbation.terms`: component {} out of range", term.component);
        }
        if let Some(fit) = &self.fit {
            if !self.epsilons.contains(&fit.epsilon) {
                bail!("config field `fit.epsilon`: {} is not in `epsilons`", fit.epsilon);
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}
