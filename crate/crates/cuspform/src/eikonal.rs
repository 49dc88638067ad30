//! Evolution of the fundamental unknowns in eikonal coordinates `(tau, u)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{argmin, centered_derivative, centered_derivative6, parabolic_refine, Stencil, UniformGrid};

/// Largest number of non-shocking fields supported by the transversal update.
pub const MAX_TRANSVERSAL: usize = 8;
use crate::simplewave::{bump, bump_slope, SimpleWave};
use crate::spectral::{self, SpectralConfig, SpectralError};
use crate::systems::SystemDefinition;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("initial data leave the state box at u = {u:.4}")]
    BoxExit { u: f64 },
    #[error("shock reached: min mu = {min_mu:.3e} at tau = {tau:.6}")]
    ShockReached { tau: f64, min_mu: f64 },
    #[error("numerical breakdown at tau = {tau:.6}")]
    NanDetected { tau: f64 },
    #[error("x is not increasing in u near node {index} at tau = {tau:.6}")]
    NonMonotoneMap { tau: f64, index: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Discretization and stopping parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grid_points: usize,
    pub tau_step: f64,
    pub mu_stop: f64,
    pub tau_max: f64,
    /// Extra grid extent on each side of the data; defaults to `tau_max * max|dlambda| + 1`.
    pub margin: Option<f64>,
    /// Upper bound on substeps when tracing one characteristic foot.
    pub substep_cap: usize,
    /// Substep length for foot tracing, as a fraction of the grid step.
    pub trace_fraction: f64,
    /// Times at which full snapshots are kept for output.
    pub checkpoints: Vec<f64>,
    /// Store every `record_every`-th step in the trajectory.
    pub record_every: usize,
    /// Store every step once `min mu` falls below this value.
    pub dense_below_mu: f64,
    /// Caps the step at this fraction of `min mu / |d_tau min mu|`, refining the approach to the shock.
    pub mu_step_fraction: Option<f64>,
    /// Smaller step (and a frame every step) from a given time on.
    pub refinement: Option<StepRefinement>,
    /// Keep evolving after the first shock, freezing nodes where `mu <= mu_stop`.
    pub continue_past_stop: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_points: 1024,
            tau_step: 1e-3,
            mu_stop: 1e-3,
            tau_max: 1.2,
            margin: None,
            substep_cap: 200_000,
            trace_fraction: 0.5,
            checkpoints: Vec::new(),
            record_every: 10,
            dense_below_mu: 0.05,
            mu_step_fraction: None,
            refinement: None,
            continue_past_stop: false,
        }
    }
}

/// Switch to `step` once `tau >= from_tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRefinement {
    pub from_tau: f64,
    pub step: f64,
}

/// One compactly supported perturbation bump in a single state component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationTerm {
    pub component: usize,
    pub center: f64,
    pub width: f64,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

/// Perturbation profile `v(x)`, rescaled to unit `C^1` norm (`sup|v| + sup|v'|`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub terms: Vec<PerturbationTerm>,
}

impl Perturbation {
    pub fn new(terms: Vec<PerturbationTerm>) -> Self {
        Self { terms }
    }

    fn raw(&self, dim: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
        let mut value = vec![0.0; dim];
        let mut slope = vec![0.0; dim];
        for t in &self.terms {
            let z = (x - t.center) / t.width;
            value[t.component] += t.amplitude * bump(z);
            slope[t.component] += t.amplitude * bump_slope(z) / t.width;
        }
        (value, slope)
    }

    fn c1_scale(&self, dim: usize) -> f64 {
        if self.terms.is_empty() {
            return 1.0;
        }
        let lo = self.terms.iter().map(|t| t.center - t.width).fold(f64::INFINITY, f64::min);
        let hi = self.terms.iter().map(|t| t.center + t.width).fold(f64::NEG_INFINITY, f64::max);
        let samples = 20_001;
        let (mut sup_v, mut sup_d) = (0.0f64, 0.0f64);
        for k in 0..samples {
            let x = lo + (hi - lo) * k as f64 / (samples - 1) as f64;
            let (v, d) = self.raw(dim, x);
            sup_v = sup_v.max(v.iter().fold(0.0, |m, a| m.max(a.abs())));
            sup_d = sup_d.max(d.iter().fold(0.0, |m, a| m.max(a.abs())));
        }
        let norm = sup_v + sup_d;
        if norm > 0.0 { 1.0 / norm } else { 1.0 }
    }

    /// Normalized perturbation value at `x`.
    pub fn eval(&self, dim: usize, x: f64) -> Vec<f64> {
        let scale = self.c1_scale(dim);
        self.raw(dim, x).0.into_iter().map(|v| v * scale).collect()
    }

    fn support(&self) -> Option<(f64, f64)> {
        if self.terms.is_empty() {
            return None;
        }
        let lo = self.terms.iter().map(|t| t.center - t.width).fold(f64::INFINITY, f64::min);
        let hi = self.terms.iter().map(|t| t.center + t.width).fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }
}

/// Structure coefficients entering the renormalized equations at one state.
#[derive(Debug, Clone)]
struct NodeCoefficients {
    /// All eigenvalues, increasing.
    lambda: Vec<f64>,
    /// Right eigenvectors of the transversal fields, `[k][component]`.
    transversal_right: Vec<Vec<f64>>,
    /// `Lambda_{I0} . r_{I0}`.
    shock_growth: f64,
    /// `Lambda_{I0} . r_{J'}`.
    cross_growth: Vec<f64>,
    /// Linear coefficients of the shocking equation, `xi^{I0}_{I0 J'} + xi^{I0}_{J' I0} + Lambda . r_{J'}`.
    shock_linear: Vec<f64>,
    /// Quadratic coefficients of the shocking equation, `xi^{I0}_{J'K'}`, `[j][k]`.
    shock_quadratic: Vec<f64>,
    /// Transversal linear coefficients `xi^{I'}_{I0 J'} + xi^{I'}_{J' I0}`, `[i][j]`.
    cross_linear: Vec<f64>,
    /// Transversal quadratic coefficients `xi^{I'}_{J'K'}`, `[i][j][k]`.
    cross_quadratic: Vec<f64>,
}

fn node_coefficients(
    system: &SystemDefinition,
    state: &[f64],
    others: &[usize],
    cfg: &SpectralConfig,
) -> Result<NodeCoefficients, SpectralError> {
    let i0 = system.shock_index;
    let t = spectral::compute_xi(system, state, cfg)?;
    let m = others.len();
    let mut shock_linear = vec![0.0; m];
    let mut shock_quadratic = vec![0.0; m * m];
    let mut cross_linear = vec![0.0; m * m];
    let mut cross_quadratic = vec![0.0; m * m * m];
    let cross_growth: Vec<f64> = others.iter().map(|&j| t.growth(i0, j)).collect();
    for (a, &j) in others.iter().enumerate() {
        shock_linear[a] = t.xi(i0, i0, j) + t.xi(i0, j, i0) + cross_growth[a];
        for (b, &k) in others.iter().enumerate() {
            shock_quadratic[a * m + b] = t.xi(i0, j, k);
        }
    }
    for (a, &i) in others.iter().enumerate() {
        for (b, &j) in others.iter().enumerate() {
            cross_linear[a * m + b] = t.xi(i, i0, j) + t.xi(i, j, i0);
            for (c, &k) in others.iter().enumerate() {
                cross_quadratic[(a * m + b) * m + c] = t.xi(i, j, k);
            }
        }
    }
    let data = &t.spectral;
    Ok(NodeCoefficients {
        lambda: data.eigenvalues.clone(),
        transversal_right: others.iter().map(|&j| data.right.column(j).iter().copied().collect()).collect(),
        shock_growth: t.growth(i0, i0),
        cross_growth,
        shock_linear,
        shock_quadratic,
        cross_linear,
        cross_quadratic,
    })
}

/// Discrete solution on a uniform `u` grid at one `tau`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EikonalField {
    pub tau: f64,
    pub grid: UniformGrid,
    pub shock_index: usize,
    /// State components, `[component][node]`.
    pub psi: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    /// Renormalized shocking derivative `mu (d_x psi)^{I0}`.
    pub shock_derivative: Vec<f64>,
    /// Transversal derivatives `(d_x psi)^{I'}`, `[k][node]` over non-shocking fields in order.
    pub transversal: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    /// Eigenvalues at each node, `[field][node]`.
    pub speeds: Vec<Vec<f64>>,
    /// Nodes no longer evolved because `mu` reached the stopping threshold.
    pub frozen: Vec<bool>,
}

impl EikonalField {
    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn len(&self) -> usize {
        self.grid.len
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len == 0
    }

    /// Non-shocking field indices in increasing order.
    pub fn transversal_fields(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| i != self.shock_index).collect()
    }

    pub fn state(&self, j: usize) -> Vec<f64> {
        self.psi.iter().map(|c| c[j]).collect()
    }

    /// Shocking speed at each node.
    pub fn shock_speed(&self) -> &[f64] {
        &self.speeds[self.shock_index]
    }

    /// Minimum of `mu` over live nodes with its parabolic-refined location.
    pub fn min_mu(&self) -> (f64, f64) {
        let j = argmin(&self.mu);
        let (offset, value) = parabolic_refine(&self.mu, j);
        (value, self.grid.node(j) + offset * self.grid.step)
    }

    fn live_min_mu(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .map(|(m, _)| *m)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Why an evolution ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    ShockReached,
    Horizon,
}

/// Stored evolution: recorded frames, checkpoints and the `min mu` history.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub system: SystemDefinition,
    pub frames: Vec<EikonalField>,
    pub checkpoints: Vec<EikonalField>,
    /// `(tau, min mu, argmin u)` after every step.
    pub min_mu_history: Vec<(f64, f64, f64)>,
    pub stop_reason: StopReason,
    pub stop_tau: f64,
    /// Time of the first `mu <= mu_stop`, if reached.
    pub first_stop_tau: Option<f64>,
    pub t_star_estimate: Option<f64>,
    pub config: SolverConfig,
}

impl Trajectory {
    /// Last frame at or before the first shock stop.
    pub fn stop_frame(&self) -> &EikonalField {
        match self.first_stop_tau {
            Some(t) => self
                .frames
                .iter()
                .rev()
                .find(|f| f.tau <= t + 1e-12)
                .unwrap_or(&self.frames[0]),
            None => self.frames.last().expect("trajectory has frames"),
        }
    }

    /// Frames at or before the first stop.
    pub fn pre_stop_frames(&self) -> &[EikonalField] {
        let limit = self.first_stop_tau.unwrap_or(f64::INFINITY) + 1e-12;
        let end = self.frames.iter().position(|f| f.tau > limit).unwrap_or(self.frames.len());
        &self.frames[..end]
    }

    /// Frame nearest to `tau`.
    pub fn frame_near(&self, tau: f64) -> &EikonalField {
        self.frames
            .iter()
            .min_by(|a, b| (a.tau - tau).abs().total_cmp(&(b.tau - tau).abs()))
            .expect("trajectory has frames")
    }
}

fn grid_for(wave: &SimpleWave, perturbation: &Perturbation, config: &SolverConfig) -> Result<UniformGrid, SolverError> {
    let system = wave.system();
    let (mut lo, mut hi) = wave.support();
    if let Some((plo, phi)) = perturbation.support() {
        lo = lo.min(plo);
        hi = hi.max(phi);
    }
    let margin = match config.margin {
        Some(m) => m,
        None => {
            let mut spread: f64 = 0.0;
            let cfg = SpectralConfig::default();
            for state in wave.curve().states() {
                let data = spectral::eigendecompose(system, state, &cfg)?;
                let l0 = data.eigenvalues[system.shock_index];
                for l in &data.eigenvalues {
                    spread = spread.max((l - l0).abs());
                }
            }
            config.tau_max * spread + 1.0
        }
    };
    let (lo, hi) = (lo - margin, hi + margin);
    let n = config.grid_points;
    let step = (hi - lo) / (n - 1) as f64;
    let anchor = wave.min_location();
    let shift = ((anchor - lo) / step).round();
    Ok(UniformGrid::new(anchor - shift * step, step, n))
}

/// Sets `u = x`, `mu = 1` and projects `d_x psi` onto the eigenbasis at `tau = 0`.
pub fn initialize(
    wave: &SimpleWave,
    perturbation: &Perturbation,
    amplitude: f64,
    config: &SolverConfig,
) -> Result<EikonalField, SolverError> {
    let system = wave.system();
    let grid = grid_for(wave, perturbation, config)?;
    let n = system.dim();
    let scale = perturbation.c1_scale(n);
    initialize_from_states(system, grid, |u| {
        let mut state = wave.state_at_label(u);
        if amplitude != 0.0 {
            let (v, _) = perturbation.raw(n, u);
            for c in 0..n {
                state[c] += amplitude * scale * v[c];
            }
        }
        state
    })
}

/// Initial field for arbitrary data `psi(0, x) = data(x)` on `grid`.
pub fn initialize_from_states(
    system: &SystemDefinition,
    grid: UniformGrid,
    data: impl Fn(f64) -> Vec<f64>,
) -> Result<EikonalField, SolverError> {
    let n = system.dim();
    let mut psi = vec![vec![0.0; grid.len]; n];
    for j in 0..grid.len {
        let u = grid.node(j);
        let state = data(u);
        if !system.contains(&state) {
            return Err(SolverError::BoxExit { u });
        }
        for c in 0..n {
            psi[c][j] = state[c];
        }
    }
    let slopes: Vec<Vec<f64>> = psi.iter().map(|c| centered_derivative6(c, grid.step)).collect();
    let others: Vec<usize> = (0..n).filter(|&i| i != system.shock_index).collect();
    let cfg = SpectralConfig::default();
    let mut shock_derivative = vec![0.0; grid.len];
    let mut transversal = vec![vec![0.0; grid.len]; others.len()];
    let mut speeds = vec![vec![0.0; grid.len]; n];
    for j in 0..grid.len {
        let state: Vec<f64> = psi.iter().map(|c| c[j]).collect();
        let data = spectral::eigendecompose(system, &state, &cfg)?;
        let gradient: Vec<f64> = slopes.iter().map(|c| c[j]).collect();
        let w = data.project(&gradient);
        shock_derivative[j] = w[system.shock_index];
        for (k, &f) in others.iter().enumerate() {
            transversal[k][j] = w[f];
        }
        for i in 0..n {
            speeds[i][j] = data.eigenvalues[i];
        }
    }
    Ok(EikonalField {
        tau: 0.0,
        grid,
        shock_index: system.shock_index,
        psi,
        mu: vec![1.0; grid.len],
        shock_derivative,
        transversal,
        x: grid.nodes(),
        speeds,
        frozen: vec![false; grid.len],
    })
}

/// Local unknowns `(psi, mu, Phi, x)` at one node.
#[derive(Debug, Clone)]
struct LocalState {
    psi: Vec<f64>,
    mu: f64,
    shock_derivative: f64,
    x: f64,
}

fn local_rhs(c: &NodeCoefficients, y: &LocalState, phi: &[f64], i0: usize) -> LocalState {
    let n = y.psi.len();
    let m = phi.len();
    let lambda = c.lambda[i0];
    let others: Vec<usize> = (0..n).filter(|&i| i != i0).collect();
    let mut dpsi = vec![0.0; n];
    for (k, &f) in others.iter().enumerate() {
        let coef = (lambda - c.lambda[f]) * phi[k];
        for s in 0..n {
            dpsi[s] += coef * c.transversal_right[k][s];
        }
    }
    let mut dmu = c.shock_growth * y.shock_derivative;
    let mut dphi = 0.0;
    for a in 0..m {
        dmu += y.mu * c.cross_growth[a] * phi[a];
        dphi += c.shock_linear[a] * y.shock_derivative * phi[a];
        for b in 0..m {
            dphi += y.mu * c.shock_quadratic[a * m + b] * phi[a] * phi[b];
        }
    }
    LocalState { psi: dpsi, mu: dmu, shock_derivative: dphi, x: lambda }
}

fn axpy(y: &LocalState, h: f64, k: &LocalState) -> LocalState {
    LocalState {
        psi: y.psi.iter().zip(&k.psi).map(|(a, b)| a + h * b).collect(),
        mu: y.mu + h * k.mu,
        shock_derivative: y.shock_derivative + h * k.shock_derivative,
        x: y.x + h * k.x,
    }
}

/// Per-level arrays used when tracing transversal characteristics.
struct LevelData {
    mu: Vec<f64>,
    shock_derivative: Vec<f64>,
    lambda: Vec<Vec<f64>>,
    /// `[i][j][node]`
    cross_linear: Vec<Vec<Vec<f64>>>,
    /// `[i][j][k][node]`
    cross_quadratic: Vec<Vec<Vec<Vec<f64>>>>,
}

impl LevelData {
    fn from_coefficients(mu: &[f64], shock_derivative: &[f64], coefs: &[NodeCoefficients], n: usize, m: usize) -> Self {
        let len = coefs.len();
        let mut lambda = vec![vec![0.0; len]; n];
        let mut cross_linear = vec![vec![vec![0.0; len]; m]; m];
        let mut cross_quadratic = vec![vec![vec![vec![0.0; len]; m]; m]; m];
        for (j, c) in coefs.iter().enumerate() {
            for i in 0..n {
                lambda[i][j] = c.lambda[i];
            }
            for a in 0..m {
                for b in 0..m {
                    cross_linear[a][b][j] = c.cross_linear[a * m + b];
                    for d in 0..m {
                        cross_quadratic[a][b][d][j] = c.cross_quadratic[(a * m + b) * m + d];
                    }
                }
            }
        }
        Self { mu: mu.to_vec(), shock_derivative: shock_derivative.to_vec(), lambda, cross_linear, cross_quadratic }
    }
}

/// Source of the traced field as `alpha + beta phi + gamma phi^2`, with the relative speed.
struct Probe {
    relative_speed: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Probe {
    /// `d phi / d u` along the characteristic.
    #[inline]
    fn derivative(&self, phi: f64) -> f64 {
        (self.alpha + phi * (self.beta + self.gamma * phi)) / self.relative_speed
    }
}

struct Stepper<'a> {
    grid: UniformGrid,
    i0: usize,
    field: usize,
    k: usize,
    m: usize,
    tau0: f64,
    dt: f64,
    old: &'a LevelData,
    new: &'a LevelData,
    phi_old: &'a [Vec<f64>],
    phi_rate: &'a [Vec<f64>],
}

impl Stepper<'_> {
    #[inline]
    fn theta(&self, tau: f64) -> f64 {
        ((tau - self.tau0) / self.dt).clamp(0.0, 1.0)
    }

    #[inline]
    fn blend(st: &Stencil, a: &[f64], b: &[f64], theta: f64) -> f64 {
        (1.0 - theta) * st.apply(a) + theta * st.apply(b)
    }

    fn mu_and_speed(&self, st: &Stencil, theta: f64) -> (f64, f64) {
        let mu = Self::blend(st, &self.old.mu, &self.new.mu, theta).max(0.0);
        let rel = Self::blend(st, &self.old.lambda[self.field], &self.new.lambda[self.field], theta)
            - Self::blend(st, &self.old.lambda[self.i0], &self.new.lambda[self.i0], theta);
        (mu, rel)
    }

    /// `d tau / d u` along the traced characteristic.
    fn slope(&self, tau: f64, u: f64) -> f64 {
        let (mu, rel) = self.mu_and_speed(&self.grid.stencil(u), self.theta(tau));
        mu / rel
    }

    fn probe(&self, tau: f64, u: f64) -> Probe {
        let st = self.grid.stencil(u);
        let theta = self.theta(tau);
        let (m, k) = (self.m, self.k);
        let (mu, rel) = self.mu_and_speed(&st, theta);
        let shock = Self::blend(&st, &self.old.shock_derivative, &self.new.shock_derivative, theta);
        let elapsed = tau - self.tau0;
        let mut others = [0.0; MAX_TRANSVERSAL];
        for b in 0..m {
            if b != k {
                others[b] = st.apply(&self.phi_old[b]) + elapsed * st.apply(&self.phi_rate[b]);
            }
        }
        let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
        for b in 0..m {
            let lin = shock * Self::blend(&st, &self.old.cross_linear[k][b], &self.new.cross_linear[k][b], theta);
            if b == k {
                beta += lin;
            } else {
                alpha += lin * others[b];
            }
            for d in 0..m {
                let q = mu * Self::blend(&st, &self.old.cross_quadratic[k][b][d], &self.new.cross_quadratic[k][b][d], theta);
                match (b == k, d == k) {
                    (true, true) => gamma += q,
                    (true, false) => beta += q * others[d],
                    (false, true) => beta += q * others[b],
                    (false, false) => alpha += q * others[b] * others[d],
                }
            }
        }
        Probe { relative_speed: rel, alpha, beta, gamma }
    }

    /// Traces back from `(tau0 + dt, u)` to level `tau0`, then integrates the source forward.
    fn update(&self, u: f64, cap: usize, fraction: f64, path: &mut Vec<(f64, f64)>) -> Option<f64> {
        let tau_end = self.tau0 + self.dt;
        let direction = if self.slope(tau_end, u) > 0.0 { -1.0 } else { 1.0 };
        let du_max = fraction * self.grid.step;
        path.clear();
        path.push((u, tau_end));
        let (mut uc, mut tc) = (u, tau_end);
        let mut steps = 0;
        while tc > self.tau0 {
            steps += 1;
            if steps > cap {
                return None;
            }
            let s1 = self.slope(tc, uc);
            let mut du = direction * du_max;
            if tc + s1 * du <= self.tau0 && s1 != 0.0 {
                du = (self.tau0 - tc) / s1;
            }
            let s2 = self.slope(tc + 0.5 * du * s1, uc + 0.5 * du);
            let mut dtau = s2 * du;
            if tc + dtau < self.tau0 && dtau != 0.0 {
                du *= (self.tau0 - tc) / dtau;
                dtau = self.tau0 - tc;
            }
            uc += du;
            tc += dtau;
            if tc - self.tau0 < 1e-14 {
                tc = self.tau0;
            }
            path.push((uc, tc));
            if du.abs() < 1e-300 {
                break;
            }
        }
        let foot = path.last().copied().expect("path has points");
        let mut phi = self.grid.interp(&self.phi_old[self.k], foot.0);
        for w in path.windows(2).rev() {
            let (u_a, t_a) = w[1];
            let (u_b, t_b) = w[0];
            let du = u_b - u_a;
            let half = phi + 0.5 * du * self.probe(t_a, u_a).derivative(phi);
            phi += du * self.probe(0.5 * (t_a + t_b), 0.5 * (u_a + u_b)).derivative(half);
        }
        Some(phi)
    }
}

/// Solver state carried between steps.
pub struct Evolution {
    system: SystemDefinition,
    config: SolverConfig,
    field: EikonalField,
    coefficients: Vec<NodeCoefficients>,
    phi_rate: Vec<Vec<f64>>,
    cfg: SpectralConfig,
    others: Vec<usize>,
}

impl Evolution {
    pub fn new(system: &SystemDefinition, field: EikonalField, config: &SolverConfig) -> Result<Self, SolverError> {
        let cfg = SpectralConfig::default();
        let others = field.transversal_fields();
        if others.len() > MAX_TRANSVERSAL {
            return Err(SolverError::InvalidConfig(format!("at most {} non-shocking fields", MAX_TRANSVERSAL)));
        }
        let coefficients = (0..field.len())
            .map(|j| node_coefficients(system, &field.state(j), &others, &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let phi_rate = vec![vec![0.0; field.len()]; others.len()];
        Ok(Self { system: system.clone(), config: config.clone(), field, coefficients, phi_rate, cfg, others })
    }

    pub fn field(&self) -> &EikonalField {
        &self.field
    }

    /// One step of length `dt`; `Err(ShockReached)` if `mu <= mu_stop` already holds on a live node.
    pub fn advance_tau(&mut self, dt: f64) -> Result<(), SolverError> {
        let live_min = self.field.live_min_mu();
        if live_min <= self.config.mu_stop && !self.config.continue_past_stop {
            return Err(SolverError::ShockReached { tau: self.field.tau, min_mu: live_min });
        }
        let i0 = self.field.shock_index;
        let n = self.field.dim();
        let m = self.others.len();
        let len = self.field.len();
        let tau0 = self.field.tau;

        let mut next = self.field.clone();
        let mut next_coefs = self.coefficients.clone();
        for j in 0..len {
            if self.field.frozen[j] {
                continue;
            }
            let phi0: Vec<f64> = (0..m).map(|k| self.field.transversal[k][j]).collect();
            let rate: Vec<f64> = (0..m).map(|k| self.phi_rate[k][j]).collect();
            let phi_at = |h: f64| -> Vec<f64> { phi0.iter().zip(&rate).map(|(p, r)| p + h * r).collect() };
            let y0 = LocalState {
                psi: self.field.state(j),
                mu: self.field.mu[j],
                shock_derivative: self.field.shock_derivative[j],
                x: self.field.x[j],
            };
            let k1 = local_rhs(&self.coefficients[j], &y0, &phi0, i0);
            let y1 = axpy(&y0, 0.5 * dt, &k1);
            let c1 = node_coefficients(&self.system, &y1.psi, &self.others, &self.cfg)?;
            let k2 = local_rhs(&c1, &y1, &phi_at(0.5 * dt), i0);
            let y2 = axpy(&y0, 0.5 * dt, &k2);
            let c2 = node_coefficients(&self.system, &y2.psi, &self.others, &self.cfg)?;
            let k3 = local_rhs(&c2, &y2, &phi_at(0.5 * dt), i0);
            let y3 = axpy(&y0, dt, &k3);
            let c3 = node_coefficients(&self.system, &y3.psi, &self.others, &self.cfg)?;
            let k4 = local_rhs(&c3, &y3, &phi_at(dt), i0);
            let mut y = y0.clone();
            for s in 0..n {
                y.psi[s] += dt / 6.0 * (k1.psi[s] + 2.0 * k2.psi[s] + 2.0 * k3.psi[s] + k4.psi[s]);
            }
            y.mu += dt / 6.0 * (k1.mu + 2.0 * k2.mu + 2.0 * k3.mu + k4.mu);
            y.shock_derivative += dt / 6.0
                * (k1.shock_derivative + 2.0 * k2.shock_derivative + 2.0 * k3.shock_derivative + k4.shock_derivative);
            y.x += dt / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
            if !y.mu.is_finite() || y.psi.iter().any(|v| !v.is_finite()) {
                return Err(SolverError::NanDetected { tau: tau0 + dt });
            }
            for s in 0..n {
                next.psi[s][j] = y.psi[s];
            }
            next.mu[j] = if self.config.continue_past_stop { y.mu.max(0.0) } else { y.mu };
            next.shock_derivative[j] = y.shock_derivative;
            next.x[j] = y.x;
            next_coefs[j] = node_coefficients(&self.system, &y.psi, &self.others, &self.cfg)?;
            for i in 0..n {
                next.speeds[i][j] = next_coefs[j].lambda[i];
            }
        }

        if m > 0 {
            let old_level = LevelData::from_coefficients(&self.field.mu, &self.field.shock_derivative, &self.coefficients, n, m);
            let new_level = LevelData::from_coefficients(&next.mu, &next.shock_derivative, &next_coefs, n, m);
            let mut updated = vec![vec![0.0; len]; m];
            for (k, &f) in self.others.iter().enumerate() {
                let stepper = Stepper {
                    grid: self.field.grid,
                    i0,
                    field: f,
                    k,
                    m,
                    tau0,
                    dt,
                    old: &old_level,
                    new: &new_level,
                    phi_old: &self.field.transversal,
                    phi_rate: &self.phi_rate,
                };
                let mut path = Vec::new();
                for j in 0..len {
                    if self.field.frozen[j] {
                        updated[k][j] = self.field.transversal[k][j];
                        continue;
                    }
                    match stepper.update(self.field.grid.node(j), self.config.substep_cap, self.config.trace_fraction, &mut path) {
                        Some(v) if v.is_finite() => updated[k][j] = v,
                        Some(_) => return Err(SolverError::NanDetected { tau: tau0 + dt }),
                        None if self.config.continue_past_stop => updated[k][j] = self.field.transversal[k][j],
                        None => return Err(SolverError::NanDetected { tau: tau0 + dt }),
                    }
                }
            }
            for k in 0..m {
                for j in 0..len {
                    self.phi_rate[k][j] = (updated[k][j] - self.field.transversal[k][j]) / dt;
                }
            }
            next.transversal = updated;
        }
        next.tau = tau0 + dt;
        if self.config.continue_past_stop {
            for j in 0..len {
                if next.mu[j] <= self.config.mu_stop {
                    next.frozen[j] = true;
                }
            }
        }
        self.field = next;
        self.coefficients = next_coefs;
        Ok(())
    }
}

/// Estimated shock time from the last two `min mu` samples, extrapolated linearly to zero.
fn extrapolate_shock_time(history: &[(f64, f64, f64)]) -> Option<f64> {
    let n = history.len();
    if n < 2 {
        return None;
    }
    let (t1, m1, _) = history[n - 2];
    let (t2, m2, _) = history[n - 1];
    if m2 >= m1 {
        return None;
    }
    Some(t2 + m2 * (t2 - t1) / (m1 - m2))
}

/// Runs [`Evolution::advance_tau`] until the first shock (or `tau_max`) and records the trajectory.
pub fn evolve_to_stop(
    system: &SystemDefinition,
    initial: EikonalField,
    config: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    let mut evo = Evolution::new(system, initial, config)?;
    let mut frames = vec![evo.field.clone()];
    let mut checkpoints = Vec::new();
    let mut pending: Vec<f64> = config.checkpoints.clone();
    pending.sort_by(|a, b| a.total_cmp(b));
    pending.reverse();
    let (m0, u0) = evo.field.min_mu();
    let mut history = vec![(0.0, m0, u0)];
    let mut first_stop = None;
    let mut steps = 0usize;
    let stop_reason;
    loop {
        let tau = evo.field.tau;
        if tau >= config.tau_max - 1e-12 {
            stop_reason = if first_stop.is_some() { StopReason::ShockReached } else { StopReason::Horizon };
            break;
        }
        let refined = config.refinement.filter(|r| tau >= r.from_tau - 1e-12);
        let mut dt = refined.map_or(config.tau_step, |r| r.step).min(config.tau_max - tau);
        if let Some(r) = config.refinement {
            if tau < r.from_tau - 1e-12 && tau + dt > r.from_tau + 1e-12 {
                dt = r.from_tau - tau;
            }
        }
        if let (Some(fraction), None, [.., a, b]) = (config.mu_step_fraction, first_stop, history.as_slice()) {
            let rate = (a.1 - b.1) / (b.0 - a.0);
            if rate > 0.0 {
                dt = dt.min((fraction * b.1 / rate).max(1e-3 * config.tau_step));
            }
        }
        if let Some(&next_check) = pending.last() {
            if next_check > tau + 1e-12 && next_check < tau + dt - 1e-12 {
                dt = next_check - tau;
            }
        }
        let live_before = evo.field.live_min_mu();
        let snapshot = (evo.field.clone(), evo.coefficients.clone(), evo.phi_rate.clone());
        evo.advance_tau(dt)?;
        if first_stop.is_none() {
            let live_after = evo.field.live_min_mu();
            let floor = 0.5 * config.mu_stop;
            if live_after < floor && live_before > config.mu_stop {
                let target = 0.75 * config.mu_stop;
                let shrink = ((live_before - target) / (live_before - live_after)).clamp(0.05, 1.0);
                evo.field = snapshot.0;
                evo.coefficients = snapshot.1;
                evo.phi_rate = snapshot.2;
                evo.advance_tau(dt * shrink)?;
            }
        }
        steps += 1;
        let (min_mu, argmin_u) = evo.field.min_mu();
        history.push((evo.field.tau, min_mu, argmin_u));
        while let Some(&c) = pending.last() {
            if c <= evo.field.tau + 1e-12 {
                checkpoints.push(evo.field.clone());
                pending.pop();
            } else {
                break;
            }
        }
        let reached = first_stop.is_none() && min_mu <= config.mu_stop;
        if reached {
            first_stop = Some(evo.field.tau);
        }
        let dense = min_mu < config.dense_below_mu || refined.is_some();
        if dense || reached || steps % config.record_every.max(1) == 0 {
            frames.push(evo.field.clone());
        }
        if reached && !config.continue_past_stop {
            stop_reason = StopReason::ShockReached;
            break;
        }
    }
    if frames.last().map(|f| f.tau) != Some(evo.field.tau) {
        frames.push(evo.field.clone());
    }
    let pre_stop: Vec<(f64, f64, f64)> = match first_stop {
        Some(t) => history.iter().copied().filter(|h| h.0 <= t + 1e-12).collect(),
        None => Vec::new(),
    };
    let t_star_estimate = extrapolate_shock_time(&pre_stop);
    Ok(Trajectory {
        system: system.clone(),
        frames,
        checkpoints,
        min_mu_history: history,
        stop_reason,
        stop_tau: evo.field.tau,
        first_stop_tau: first_stop,
        t_star_estimate,
        config: config.clone(),
    })
}

/// Physical sample `(t, x, psi, d_x psi)` at one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhysicalRow {
    pub t: f64,
    pub x: f64,
    pub psi: Vec<f64>,
    pub dpsi_dx: Vec<f64>,
}

/// Maps a field back to `(t, x)` using `d_x = mu^{-1} d_u`.
pub fn physical_reconstruct(field: &EikonalField) -> Result<Vec<PhysicalRow>, SolverError> {
    for j in 1..field.len() {
        if field.x[j] <= field.x[j - 1] {
            return Err(SolverError::NonMonotoneMap { tau: field.tau, index: j });
        }
    }
    let slopes: Vec<Vec<f64>> = field.psi.iter().map(|c| centered_derivative(c, field.grid.step)).collect();
    Ok((0..field.len())
        .map(|j| PhysicalRow {
            t: field.tau,
            x: field.x[j],
            psi: field.state(j),
            dpsi_dx: slopes.iter().map(|c| c[j] / field.mu[j]).collect(),
        })
        .collect())
}

/// Discrete residuals of identities that hold for exact solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `|d_tau mu - d_u lambda|`.
    pub commutator: f64,
    /// `|Phi - l^{I0} . d_u psi|`.
    pub duality: f64,
    /// `|l^{I'} . d_tau psi - (lambda - lambda_{I'}) phi^{I'}|`.
    pub transport_relation: f64,
}

/// Residual diagnostics from two consecutive snapshots, skipping `trim` nodes at each end.
pub fn residual_diagnostics(
    system: &SystemDefinition,
    earlier: &EikonalField,
    later: &EikonalField,
    trim: usize,
) -> Result<ResidualReport, SolverError> {
    let dt = later.tau - earlier.tau;
    let i0 = later.shock_index;
    let h = later.grid.step;
    let cfg = SpectralConfig::default();
    let others = later.transversal_fields();
    let lambda_slope_a = centered_derivative(earlier.shock_speed(), h);
    let lambda_slope_b = centered_derivative(later.shock_speed(), h);
    let psi_slope: Vec<Vec<f64>> = later.psi.iter().map(|c| centered_derivative(c, h)).collect();
    let mut report = ResidualReport { commutator: 0.0, duality: 0.0, transport_relation: 0.0 };
    for j in trim..later.len().saturating_sub(trim) {
        let dmu = (later.mu[j] - earlier.mu[j]) / dt;
        let dl = 0.5 * (lambda_slope_a[j] + lambda_slope_b[j]);
        report.commutator = report.commutator.max((dmu - dl).abs());

        let state = later.state(j);
        let data = spectral::eigendecompose(system, &state, &cfg)?;
        let grad: Vec<f64> = psi_slope.iter().map(|c| c[j]).collect();
        let w = data.project(&grad);
        report.duality = report.duality.max((later.shock_derivative[j] - w[i0]).abs());

        let mid: Vec<f64> = (0..state.len()).map(|s| 0.5 * (earlier.psi[s][j] + later.psi[s][j])).collect();
        let mid_data = spectral::eigendecompose(system, &mid, &cfg)?;
        let dpsi: Vec<f64> = (0..state.len()).map(|s| (later.psi[s][j] - earlier.psi[s][j]) / dt).collect();
        let proj = mid_data.project(&dpsi);
        for (k, &f) in others.iter().enumerate() {
            let rel_a = earlier.speeds[i0][j] - earlier.speeds[f][j];
            let rel_b = later.speeds[i0][j] - later.speeds[f][j];
            let expected = 0.5 * (rel_a * earlier.transversal[k][j] + rel_b * later.transversal[k][j]);
            report.transport_relation = report.transport_relation.max((proj[f] - expected).abs());
        }
    }
    Ok(report)
}

/// Discrete `C^1_{tau,u}` norms of the fundamental unknowns at `later`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothnessNorms {
    pub psi: f64,
    pub mu: f64,
    pub shock_derivative: f64,
    pub transversal: f64,
}

pub fn c1_norms(earlier: &EikonalField, later: &EikonalField) -> SmoothnessNorms {
    let dt = later.tau - earlier.tau;
    let h = later.grid.step;
    let norm = |a: &[f64], b: &[f64]| -> f64 {
        let sup = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let du = centered_derivative(b, h).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dtau = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max(((y - x) / dt).abs()));
        sup + du + dtau
    };
    let many = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        a.iter().zip(b).map(|(x, y)| norm(x, y)).fold(0.0, f64::max)
    };
    SmoothnessNorms {
        psi: many(&earlier.psi, &later.psi),
        mu: norm(&earlier.mu, &later.mu),
        shock_derivative: norm(&earlier.shock_derivative, &later.shock_derivative),
        transversal: many(&earlier.transversal, &later.transversal),
    }
}

/// `max |d_x psi^{I0}|` over the grid, in the eigenbasis.
pub fn max_shock_gradient(field: &EikonalField) -> f64 {
    field
        .shock_derivative
        .iter()
        .zip(&field.mu)
        .map(|(p, m)| (p / m).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplewave::{build_simple_wave, integrate_state_curve, ThetaProfile};
    use crate::systems::{builtin_system, SystemParams};

    fn burgers_wave() -> SimpleWave {
        let sys = builtin_system("burgers_transport", &SystemParams::default()).unwrap();
        let curve = integrate_state_curve(&sys, &[2.0, 0.0], 1.5, 0.01).unwrap();
        build_simple_wave(&sys, curve, ThetaProfile::single(2.0, 0.5, 0.0, 0.0), true).unwrap()
    }

    fn small_config() -> SolverConfig {
        SolverConfig { grid_points: 256, tau_step: 5e-3, tau_max: 0.5, ..SolverConfig::default() }
    }

    #[test]
    fn unperturbed_initial_data_have_no_transversal_part() {
        let wave = burgers_wave();
        let field = initialize(&wave, &Perturbation::default(), 0.0, &small_config()).unwrap();
        assert!(field.mu.iter().all(|&m| m == 1.0));
        assert!(field.transversal[0].iter().all(|&p| p == 0.0));
        assert_eq!(field.x, field.grid.nodes());
    }

    #[test]
    fn perturbation_projection_scales_with_amplitude() {
        let wave = burgers_wave();
        let p = Perturbation::new(vec![PerturbationTerm { component: 1, center: 0.3, width: 1.0, amplitude: 1.0 }]);
        let field = initialize(&wave, &p, 1e-2, &small_config()).unwrap();
        let sup = field.transversal[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup > 0.0 && sup <= 1e-2 * 1.01);
    }

    #[test]
    fn horizon_stop_before_shock() {
        let wave = burgers_wave();
        let cfg = small_config();
        let field = initialize(&wave, &Perturbation::default(), 0.0, &cfg).unwrap();
        let traj = evolve_to_stop(wave.system(), field, &cfg).unwrap();
        assert_eq!(traj.stop_reason, StopReason::Horizon);
        let (m, _) = traj.frames.last().unwrap().min_mu();
        assert!((m - 0.5).abs() < 1e-6);
    }

    #[test]
    fn identity_chart_at_start() {
        let wave = burgers_wave();
        let field = initialize(&wave, &Perturbation::default(), 0.0, &small_config()).unwrap();
        let rows = physical_reconstruct(&field).unwrap();
        for (j, row) in rows.iter().enumerate() {
            assert_eq!(row.x, field.grid.node(j));
        }
    }
}
