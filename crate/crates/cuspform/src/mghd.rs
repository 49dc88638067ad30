//! The infimum `mu*` over causal pasts and the future boundary of the maximal development.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::{
    evolve_to_stop, initialize_from_states, EikonalField, SolverConfig, SolverError, StepRefinement, Trajectory,
};
use crate::numerics::{linear_fit, Stencil, UniformGrid};
use crate::preshock::{detect_preshock, refined_minimum, PreshockError};
use crate::simplewave::{bump, bump_slope, SimpleWave};
use crate::spectral::{self, SpectralConfig, SpectralError};
use crate::systems::{builtin_system, SystemDefinition, SystemError, SystemParams};

#[derive(Debug, Error)]
pub enum MghdError {
    #[error("characteristic left the computed domain through the {0:?} face")]
    DomainExit(Face),
    #[error("L mu <= -1/2 fails in the swept region (max d_tau mu = {max_rate:.3e})")]
    CertificateFailure { max_rate: f64 },
    #[error("level ladder unresolved at u = {u:.5}: finest gap is {ratio:.1}x the linear prediction")]
    ResolutionLoss { u: f64, ratio: f64 },
    #[error("invalid causal configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory has fewer than two frames")]
    NoFrames,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Preshock(#[from] PreshockError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Face {
    Left,
    Right,
    Initial,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Past,
    Future,
}

/// Trapezoidal initial surface, box horizon and extraction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalConfig {
    /// Label at the middle of the trapezoid.
    pub center: f64,
    pub eta: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Largest speed difference `max_I sup |lambda_I - lambda|` on the background wave.
    pub lambda_star: f64,
    /// Level of the trapezoid `tilde tau = base_level` bounding the past regions.
    pub base_level: f64,
    pub t_box: f64,
    /// Characteristic tracing step as a fraction of the grid step.
    pub trace_fraction: f64,
    /// Finest level `s` of the ladder; rungs double from here.
    pub ladder_min: f64,
    pub ladder_rungs: usize,
    pub mu_zero_tol: f64,
    /// `d_u mu` tolerance in units of `sqrt(2 mu_zero_tol mu_uu)`, with `mu_uu` the curvature at the stop.
    pub dmu_zero_factor: f64,
    /// `mu` values within this factor of the tolerance are flagged ambiguous.
    pub ambiguity_factor: f64,
    /// Same for `d_u mu` on points with `mu` below tolerance.
    pub slope_ambiguity_factor: f64,
    /// Required `L mu` bound in the swept region.
    pub certificate_bound: f64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self {
            center: 0.0,
            eta: 0.1,
            delta1: 0.1,
            delta2: 0.1,
            lambda_star: 1.0,
            base_level: 0.99,
            t_box: 1.01,
            trace_fraction: 0.5,
            ladder_min: 2e-4,
            ladder_rungs: 4,
            mu_zero_tol: 3e-4,
            dmu_zero_factor: 1.0,
            ambiguity_factor: 3.0,
            slope_ambiguity_factor: 1.5,
            certificate_bound: -0.5,
        }
    }
}

impl CausalConfig {
    /// Box `[1 - delta, 1 + delta]` with `delta = delta1 delta2 / (2 (1 + lambda_star))`, closing the
    /// region above the base level inside `|u - center| <= eta + delta1`.
    pub fn from_condition(
        center: f64,
        eta: f64,
        delta1: f64,
        delta2: f64,
        lambda_star: f64,
        mu_stop: f64,
    ) -> Result<Self, MghdError> {
        if !(delta2 > 0.0 && delta2 <= 0.1) {
            return Err(MghdError::InvalidConfig(format!("delta2 = {delta2} outside (0, 1/10]")));
        }
        if !(eta >= 0.0 && delta1 > 0.0 && lambda_star >= 0.0) {
            return Err(MghdError::InvalidConfig("eta, delta1 and lambda_star must be positive".into()));
        }
        let delta = delta1 * delta2 / (2.0 * (1.0 + lambda_star));
        Ok(Self {
            center,
            eta,
            delta1,
            delta2,
            lambda_star,
            base_level: 1.0 - delta,
            t_box: 1.0 + delta,
            ladder_min: 2.0 * mu_stop,
            mu_zero_tol: 3.0 * mu_stop,
            ..Self::default()
        })
    }

    /// Height of the trapezoid above `tau = 0` at label `u`.
    pub fn trapezoid(&self, u: f64) -> f64 {
        let r = (u - self.center).abs();
        let slope = self.delta2 / (1.0 + self.lambda_star);
        if r <= self.eta {
            0.0
        } else if r <= self.eta + self.delta1 {
            slope * (r - self.eta)
        } else {
            slope * self.delta1
        }
    }

    pub fn tilde_tau(&self, tau: f64, u: f64) -> f64 {
        tau - self.trapezoid(u)
    }

    /// Time where the base surface crosses the column `u`.
    pub fn base_time(&self, u: f64) -> f64 {
        self.base_level + self.trapezoid(u)
    }

    /// Solver settings that resolve the box: refined steps from below the base level and a run past `t_box`.
    pub fn solver_settings(&self, base: &SolverConfig, refined_steps: usize) -> SolverConfig {
        let width = self.t_box - self.base_level;
        SolverConfig {
            tau_max: self.t_box + 0.1 * width,
            continue_past_stop: true,
            refinement: Some(StepRefinement {
                from_tau: (self.base_level - 0.1 * width).max(0.0),
                step: width / refined_steps as f64,
            }),
            ..base.clone()
        }
    }
}

/// `lambda* = max_I sup |lambda_I - lambda_{I0}|` over the wave's states.
pub fn lambda_star(wave: &SimpleWave) -> Result<f64, MghdError> {
    let system = wave.system();
    let cfg = SpectralConfig::default();
    let mut out: f64 = 0.0;
    for state in wave.curve().states() {
        let data = spectral::eigendecompose(system, state, &cfg)?;
        let l0 = data.eigenvalues[system.shock_index];
        for l in &data.eigenvalues {
            out = out.max((l - l0).abs());
        }
    }
    Ok(out)
}

/// Frames of one trajectory with interpolation in `(tau, u)`: linear in `tau`, cubic in `u`.
pub struct FrameSet<'a> {
    frames: Vec<&'a EikonalField>,
    taus: Vec<f64>,
    grid: UniformGrid,
    shock_index: usize,
    dim: usize,
}

struct Location {
    stencil: Stencil,
    k: usize,
    theta: f64,
}

impl<'a> FrameSet<'a> {
    pub fn new(trajectory: &'a Trajectory) -> Result<Self, MghdError> {
        let mut frames: Vec<&EikonalField> = trajectory.frames.iter().collect();
        frames.dedup_by(|a, b| a.tau <= b.tau);
        if frames.len() < 2 {
            return Err(MghdError::NoFrames);
        }
        let first = frames[0];
        Ok(Self {
            taus: frames.iter().map(|f| f.tau).collect(),
            grid: first.grid,
            shock_index: first.shock_index,
            dim: first.dim(),
            frames,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn tau_range(&self) -> (f64, f64) {
        (self.taus[0], *self.taus.last().expect("non-empty"))
    }

    pub fn frames(&self) -> &[&'a EikonalField] {
        &self.frames
    }

    fn locate(&self, tau: f64, u: f64) -> Location {
        let n = self.taus.len();
        let k = match self.taus.binary_search_by(|t| t.total_cmp(&tau)) {
            Ok(k) => k.min(n - 2),
            Err(0) => 0,
            Err(k) => (k - 1).min(n - 2),
        };
        let theta = ((tau - self.taus[k]) / (self.taus[k + 1] - self.taus[k])).clamp(0.0, 1.0);
        Location { stencil: self.grid.stencil(u), k, theta }
    }

    #[inline]
    fn eval(&self, at: &Location, pick: impl Fn(&EikonalField) -> &[f64]) -> f64 {
        let a = at.stencil.apply(pick(self.frames[at.k]));
        let b = at.stencil.apply(pick(self.frames[at.k + 1]));
        (1.0 - at.theta) * a + at.theta * b
    }

    pub fn mu(&self, tau: f64, u: f64) -> f64 {
        self.eval(&self.locate(tau, u), |f| &f.mu)
    }

    pub fn x(&self, tau: f64, u: f64) -> f64 {
        self.eval(&self.locate(tau, u), |f| &f.x)
    }

    pub fn speed(&self, field: usize, tau: f64, u: f64) -> f64 {
        self.eval(&self.locate(tau, u), |f| &f.speeds[field])
    }

    pub fn state(&self, tau: f64, u: f64) -> Vec<f64> {
        let at = self.locate(tau, u);
        (0..self.dim).map(|c| self.eval(&at, |f| &f.psi[c])).collect()
    }

    /// `d_u mu` from the cubic interpolant, linear in `tau`.
    pub fn mu_slope(&self, tau: f64, u: f64) -> f64 {
        let at = self.locate(tau, u);
        let a = self.grid.interp_with_slope(&self.frames[at.k].mu, u).1;
        let b = self.grid.interp_with_slope(&self.frames[at.k + 1].mu, u).1;
        (1.0 - at.theta) * a + at.theta * b
    }

    /// `d_tau mu` on the frame interval containing `tau`.
    pub fn mu_rate(&self, tau: f64, u: f64) -> f64 {
        let at = self.locate(tau, u);
        let a = at.stencil.apply(&self.frames[at.k].mu);
        let b = at.stencil.apply(&self.frames[at.k + 1].mu);
        (b - a) / (self.taus[at.k + 1] - self.taus[at.k])
    }

    /// `d tau / d u` along field `field`, i.e. `mu / (lambda_I - lambda_{I0})`.
    fn slope(&self, field: usize, tau: f64, u: f64) -> f64 {
        let at = self.locate(tau, u);
        let mu = self.eval(&at, |f| &f.mu).max(0.0);
        let rel = self.eval(&at, |f| &f.speeds[field]) - self.eval(&at, |f| &f.speeds[self.shock_index]);
        mu / rel
    }
}

/// Sample on a traced characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSample {
    pub tau: f64,
    pub u: f64,
    pub mu: f64,
    pub x: f64,
}

/// Integral curve of the `field` characteristic, from `start` until the base surface (past) or `t_box` (future).
pub fn trace_characteristic(
    frames: &FrameSet,
    config: &CausalConfig,
    field: usize,
    start: (f64, f64),
    direction: Direction,
) -> Result<Vec<CurveSample>, MghdError> {
    let mut out = Vec::new();
    trace_into(frames, config, field, start, direction, config.trace_fraction, &mut out)?;
    Ok(out)
}

fn sample_at(frames: &FrameSet, tau: f64, u: f64) -> CurveSample {
    let at = frames.locate(tau, u);
    CurveSample { tau, u, mu: frames.eval(&at, |f| &f.mu), x: frames.eval(&at, |f| &f.x) }
}

fn trace_into(
    frames: &FrameSet,
    config: &CausalConfig,
    field: usize,
    (tau0, u0): (f64, f64),
    direction: Direction,
    fraction: f64,
    out: &mut Vec<CurveSample>,
) -> Result<(), MghdError> {
    out.clear();
    out.push(sample_at(frames, tau0, u0));
    let (tau_lo, tau_hi) = frames.tau_range();
    let past = direction == Direction::Past;
    let done = |tau: f64, u: f64| -> f64 {
        if past {
            tau - config.base_time(u)
        } else {
            config.t_box - tau
        }
    };
    if done(tau0, u0) <= 0.0 {
        return Ok(());
    }
    if field == frames.shock_index {
        let stop = if past { config.base_time(u0).max(tau_lo) } else { config.t_box.min(tau_hi) };
        let levels: Vec<f64> = frames
            .taus
            .iter()
            .copied()
            .filter(|&t| if past { t < tau0 && t > stop } else { t > tau0 && t < stop })
            .collect();
        let ordered: Vec<f64> = if past { levels.into_iter().rev().collect() } else { levels };
        for t in ordered.into_iter().chain(std::iter::once(stop)) {
            out.push(sample_at(frames, t, u0));
        }
        return Ok(());
    }
    let rel = frames.speed(field, tau0, u0) - frames.speed(frames.shock_index, tau0, u0);
    let sign = if rel > 0.0 { 1.0 } else { -1.0 };
    let du_dir = if past { -sign } else { sign };
    let h = du_dir * fraction * frames.grid.step;
    let grid = frames.grid;
    let rk4 = |tau: f64, u: f64, du: f64| -> f64 {
        let k1 = frames.slope(field, tau, u);
        let k2 = frames.slope(field, tau + 0.5 * du * k1, u + 0.5 * du);
        let k3 = frames.slope(field, tau + 0.5 * du * k2, u + 0.5 * du);
        let k4 = frames.slope(field, tau + du * k3, u + du);
        tau + du / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let (mut tau, mut u) = (tau0, u0);
    for _ in 0..10_000_000 {
        let mut du = h;
        let mut next_tau = rk4(tau, u, du);
        if done(next_tau, u + du) <= 0.0 {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if done(rk4(tau, u, mid * h), u + mid * h) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            du = hi * h;
            next_tau = rk4(tau, u, du);
            out.push(sample_at(frames, next_tau, u + du));
            return Ok(());
        }
        tau = next_tau;
        u += du;
        if u < grid.start {
            return Err(MghdError::DomainExit(Face::Left));
        }
        if u > grid.end() {
            return Err(MghdError::DomainExit(Face::Right));
        }
        if tau < tau_lo {
            return Err(MghdError::DomainExit(Face::Initial));
        }
        if tau > tau_hi {
            return Err(MghdError::DomainExit(Face::Final));
        }
        out.push(sample_at(frames, tau, u));
    }
    Err(MghdError::DomainExit(if past { Face::Initial } else { Face::Final }))
}

/// Minimum of `mu` over curve samples, refined by a parabola through the discrete minimum.
fn curve_minimum(samples: &[CurveSample]) -> f64 {
    let (j, _) = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mu.total_cmp(&b.1.mu))
        .expect("curve has samples");
    let m = samples[j].mu;
    if j == 0 || j + 1 >= samples.len() {
        return m;
    }
    let arc = |a: &CurveSample, b: &CurveSample| ((a.u - b.u).powi(2) + (a.tau - b.tau).powi(2)).sqrt();
    let (p, q, r) = (&samples[j - 1], &samples[j], &samples[j + 1]);
    let (h0, h1) = (arc(p, q), arc(q, r));
    if h0 == 0.0 || h1 == 0.0 {
        return m;
    }
    let d0 = (q.mu - p.mu) / h0;
    let d1 = (r.mu - q.mu) / h1;
    let curvature = 2.0 * (d1 - d0) / (h0 + h1);
    if curvature <= 0.0 {
        return m;
    }
    let slope_at_q = (d0 * h1 + d1 * h0) / (h0 + h1);
    (m - 0.5 * slope_at_q * slope_at_q / curvature).min(m)
}

/// `mu*` at one point with the value of the truncated `tilde mu*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuStar {
    pub value: f64,
    pub truncated: f64,
    /// `L mu` bound held along the traced curves.
    pub certified: bool,
    /// The brute-force cone minimum replaced the two-characteristic value.
    pub fallback: bool,
}

struct Workspace {
    a: Vec<CurveSample>,
    b: Vec<CurveSample>,
}

impl Workspace {
    fn new() -> Self {
        Self { a: Vec::new(), b: Vec::new() }
    }
}

fn extremal_fields(frames: &FrameSet) -> (usize, usize) {
    (0, frames.dim - 1)
}

fn mu_star_reduced(
    frames: &FrameSet,
    config: &CausalConfig,
    p: (f64, f64),
    ws: &mut Workspace,
) -> Result<f64, MghdError> {
    let (slow, fast) = extremal_fields(frames);
    trace_into(frames, config, slow, p, Direction::Past, config.trace_fraction, &mut ws.a)?;
    trace_into(frames, config, fast, p, Direction::Past, config.trace_fraction, &mut ws.b)?;
    Ok(curve_minimum(&ws.a).min(curve_minimum(&ws.b)))
}

fn certificate_holds(frames: &FrameSet, config: &CausalConfig, curves: &[&[CurveSample]]) -> (bool, f64) {
    let mut worst = f64::NEG_INFINITY;
    for c in curves {
        for s in c.iter() {
            worst = worst.max(frames.mu_rate(s.tau, s.u));
        }
    }
    (worst <= config.certificate_bound, worst)
}

/// `mu*(p)` by the two extremal past characteristics, with a brute-force fallback when the certificate fails.
pub fn mu_star(frames: &FrameSet, config: &CausalConfig, p: (f64, f64)) -> Result<MuStar, MghdError> {
    let mut ws = Workspace::new();
    let value = mu_star_reduced(frames, config, p, &mut ws)?;
    let (certified, _) = certificate_holds(frames, config, &[&ws.a, &ws.b]);
    let (value, fallback) = if certified { (value, false) } else { (mu_star_brute_force(frames, config, p)?.value, true) };
    Ok(MuStar { value, truncated: value.min(config.t_box - p.0), certified, fallback })
}

/// Brute-force cone minimum and the `L mu` bound over the lattice nodes of the cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeMinimum {
    pub value: f64,
    pub max_rate: f64,
    pub nodes: usize,
}

fn curve_label_at(curve: &[CurveSample], tau: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        let (lo, hi) = if a.tau <= b.tau { (a, b) } else { (b, a) };
        if tau >= lo.tau && tau <= hi.tau && hi.tau > lo.tau {
            let t = (tau - lo.tau) / (hi.tau - lo.tau);
            Some(lo.u + t * (hi.u - lo.u))
        } else {
            None
        }
    })
}

/// Minimum of `mu` over the lattice nodes inside the past cone of `p`, bounded by finely traced
/// extremal characteristics, and over the bounding curves themselves.
pub fn mu_star_brute_force(frames: &FrameSet, config: &CausalConfig, p: (f64, f64)) -> Result<ConeMinimum, MghdError> {
    let (slow, fast) = extremal_fields(frames);
    let fine = config.trace_fraction / 8.0;
    let mut right = Vec::new();
    let mut left = Vec::new();
    trace_midpoint(frames, config, slow, p, fine, &mut right)?;
    trace_midpoint(frames, config, fast, p, fine, &mut left)?;
    let mut value = curve_minimum(&right).min(curve_minimum(&left));
    let mut max_rate = f64::NEG_INFINITY;
    let mut nodes = 0;
    let grid = frames.grid;
    for (k, f) in frames.frames.iter().enumerate() {
        if f.tau > p.0 || k + 1 >= frames.frames.len() {
            continue;
        }
        let (Some(a), Some(b)) = (curve_label_at(&left, f.tau), curve_label_at(&right, f.tau)) else {
            continue;
        };
        let (lo, hi) = (a.min(b), a.max(b));
        let next = frames.frames[k + 1];
        for j in grid.nearest(lo).saturating_sub(1)..=grid.nearest(hi) + 1 {
            if j >= grid.len {
                continue;
            }
            let u = grid.node(j);
            if u < lo || u > hi || config.tilde_tau(f.tau, u) < config.base_level {
                continue;
            }
            nodes += 1;
            value = value.min(f.mu[j]);
            max_rate = max_rate.max((next.mu[j] - f.mu[j]) / (next.tau - f.tau));
        }
    }
    Ok(ConeMinimum { value, max_rate, nodes })
}

/// Explicit midpoint tracing in `u`, independent of the production integrator.
fn trace_midpoint(
    frames: &FrameSet,
    config: &CausalConfig,
    field: usize,
    (tau0, u0): (f64, f64),
    fraction: f64,
    out: &mut Vec<CurveSample>,
) -> Result<(), MghdError> {
    if field == frames.shock_index {
        return trace_into(frames, config, field, (tau0, u0), Direction::Past, fraction, out);
    }
    out.clear();
    out.push(sample_at(frames, tau0, u0));
    let rel = frames.speed(field, tau0, u0) - frames.speed(frames.shock_index, tau0, u0);
    let h = -rel.signum() * fraction * frames.grid.step;
    let (mut tau, mut u) = (tau0, u0);
    let step = |tau: f64, u: f64, du: f64| {
        let k1 = frames.slope(field, tau, u);
        tau + du * frames.slope(field, tau + 0.5 * du * k1, u + 0.5 * du)
    };
    loop {
        let next = step(tau, u, h);
        if next - config.base_time(u + h) <= 0.0 {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if step(tau, u, mid * h) - config.base_time(u + mid * h) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(sample_at(frames, step(tau, u, hi * h), u + hi * h));
            return Ok(());
        }
        tau = next;
        u += h;
        if u < frames.grid.start || u > frames.grid.end() {
            return Err(MghdError::DomainExit(if u < frames.grid.start { Face::Left } else { Face::Right }));
        }
        if tau < frames.taus[0] {
            return Err(MghdError::DomainExit(Face::Initial));
        }
        out.push(sample_at(frames, tau, u));
    }
}

/// Class of a boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryClass {
    Preshock,
    Singular,
    Cauchy,
    Extensible,
    /// Within tolerance of two classes.
    Ambiguous,
}

impl BoundaryClass {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Preshock => "preshock",
            Self::Singular => "singular",
            Self::Cauchy => "cauchy",
            Self::Extensible => "extensible",
            Self::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub t: f64,
    pub x: f64,
    pub tau: f64,
    pub u: f64,
    /// The point lies on the box top `tau = t_box`.
    pub on_top: bool,
    /// Extrapolated `mu` and `d_u mu` at the point.
    pub mu: f64,
    pub mu_slope: f64,
    /// `mu*` at the top of the column (only meaningful for top points).
    pub top_mu_star: f64,
    pub class: BoundaryClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPolyline {
    pub points: Vec<BoundaryPoint>,
    /// `dt/dx` per segment.
    pub slopes: Vec<f64>,
    /// Ladder levels, increasing.
    pub levels: Vec<f64>,
    /// `sup_u |tau_{s_k} - tau_{s_{k+1}}|` per rung.
    pub ladder_gaps: Vec<f64>,
    pub mu_zero_tol: f64,
    pub dmu_zero_tol: f64,
}

fn level_time(
    frames: &FrameSet,
    config: &CausalConfig,
    u: f64,
    s: f64,
    lo: f64,
    hi: f64,
    ws: &mut Workspace,
) -> Result<f64, MghdError> {
    let f = |tau: f64, ws: &mut Workspace| -> Result<f64, MghdError> {
        let m = mu_star_reduced(frames, config, (tau, u), ws)?;
        Ok(m.min(config.t_box - tau) - s)
    };
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a, ws)?;
    if fa <= 0.0 {
        return Ok(lo);
    }
    let mut fb = f(b, ws)?;
    if fb > 0.0 {
        return Ok(hi);
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if b - a <= 1e-12 * (1.0 + b.abs()) {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let fc = f(c, ws)?;
        if fc > 0.0 {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    Ok(0.5 * (a + b))
}

/// Extracts `{tilde mu* = 0}` column by column from a ladder of level sets, extrapolated linearly to `s = 0`.
pub fn extract_boundary(trajectory: &Trajectory, config: &CausalConfig) -> Result<BoundaryPolyline, MghdError> {
    let frames = FrameSet::new(trajectory)?;
    let grid = frames.grid;
    let (tau_lo, tau_hi) = frames.tau_range();
    if tau_hi < config.t_box {
        return Err(MghdError::InvalidConfig(format!("trajectory ends at {tau_hi} before t_box = {}", config.t_box)));
    }
    let levels: Vec<f64> = (0..config.ladder_rungs.max(2)).map(|k| config.ladder_min * 2f64.powi(k as i32)).collect();
    let reach = config.eta + config.delta1;
    let columns: Vec<f64> = grid.nodes().into_iter().filter(|u| (u - config.center).abs() <= reach).collect();
    let mut ws = Workspace::new();
    let mut points = Vec::with_capacity(columns.len());
    let mut ladder_gaps = vec![0.0f64; levels.len() - 1];
    for &u in &columns {
        let lo = config.base_time(u).max(tau_lo);
        let top_mu_star = mu_star_reduced(&frames, config, (config.t_box, u), &mut ws)?;
        let s_max = levels[levels.len() - 1];
        let times: Vec<f64> = if top_mu_star > s_max * (1.0 + 1e-9) {
            levels.iter().map(|s| (config.t_box - s).max(lo)).collect()
        } else {
            let mut times = Vec::with_capacity(levels.len());
            let mut hi = config.t_box;
            for &s in levels.iter() {
                let t = level_time(&frames, config, u, s, lo, hi, &mut ws)?;
                times.push(t);
                hi = t.max(lo);
            }
            times
        };
        let free = |k: usize| times[k] > lo + 1e-12;
        for k in 0..levels.len() - 1 {
            if free(k + 1) {
                ladder_gaps[k] = ladder_gaps[k].max((times[k] - times[k + 1]).abs());
            }
        }
        if levels.len() >= 3 && free(2) {
            let fine = times[0] - times[1];
            let coarse = times[1] - times[2];
            if coarse > 1e-8 && fine > 10.0 * 0.5 * coarse {
                return Err(MghdError::ResolutionLoss { u, ratio: fine / (0.5 * coarse) });
            }
        }
        let (s0, s1) = (levels[0], levels[1]);
        let extrapolate = |a: f64, b: f64| a - s0 * (b - a) / (s1 - s0);
        let tau = extrapolate(times[0], times[1]).min(config.t_box);
        let on_top = mu_star_reduced(&frames, config, (times[0], u), &mut ws)? > s0 * (1.0 + 1e-6);
        let mu = extrapolate(frames.mu(times[0], u), frames.mu(times[1], u));
        let mu_slope = extrapolate(frames.mu_slope(times[0], u), frames.mu_slope(times[1], u));
        let (tau, x) = if on_top {
            (config.t_box, frames.x(config.t_box, u))
        } else {
            (tau, frames.x(tau, u))
        };
        points.push(BoundaryPoint {
            t: tau,
            x,
            tau,
            u,
            on_top,
            mu: mu.max(0.0),
            mu_slope,
            top_mu_star,
            class: BoundaryClass::Ambiguous,
        });
    }
    let slopes = points.windows(2).map(|w| (w[1].t - w[0].t) / (w[1].x - w[0].x)).collect();
    Ok(BoundaryPolyline {
        points,
        slopes,
        levels,
        ladder_gaps,
        mu_zero_tol: config.mu_zero_tol,
        dmu_zero_tol: 0.0,
    })
}

/// Fills the point classes from `mu` and `d_u mu` at each point, or `mu*` at the box top for top points.
pub fn classify_boundary(polyline: &mut BoundaryPolyline, trajectory: &Trajectory, config: &CausalConfig) {
    let curvature = refined_minimum(trajectory.stop_frame()).curvature.abs();
    let mu_tol = config.mu_zero_tol;
    let dmu_tol = config.dmu_zero_factor * (2.0 * mu_tol * curvature).sqrt();
    let kappa = config.ambiguity_factor;
    polyline.mu_zero_tol = mu_tol;
    polyline.dmu_zero_tol = dmu_tol;
    for p in polyline.points.iter_mut() {
        p.class = if p.on_top {
            if p.top_mu_star > kappa * mu_tol {
                BoundaryClass::Extensible
            } else if p.top_mu_star <= mu_tol {
                BoundaryClass::Cauchy
            } else {
                BoundaryClass::Ambiguous
            }
        } else if p.mu > kappa * mu_tol {
            BoundaryClass::Cauchy
        } else if p.mu <= mu_tol {
            let d = p.mu_slope.abs();
            if d > config.slope_ambiguity_factor * dmu_tol {
                BoundaryClass::Singular
            } else if d <= dmu_tol {
                BoundaryClass::Preshock
            } else {
                BoundaryClass::Ambiguous
            }
        } else {
            BoundaryClass::Ambiguous
        };
    }
}

/// Contiguous runs of preshock or ambiguous points that contain at least one preshock point.
pub fn preshock_clusters(polyline: &BoundaryPolyline) -> Vec<std::ops::Range<usize>> {
    let pts = &polyline.points;
    let mut out = Vec::new();
    let mut j = 0;
    while j < pts.len() {
        if matches!(pts[j].class, BoundaryClass::Preshock | BoundaryClass::Ambiguous) {
            let start = j;
            let mut has = false;
            while j < pts.len() && matches!(pts[j].class, BoundaryClass::Preshock | BoundaryClass::Ambiguous) {
                has |= pts[j].class == BoundaryClass::Preshock;
                j += 1;
            }
            if has {
                out.push(start..j);
            }
        } else {
            j += 1;
        }
    }
    out
}

/// Majority class among the classified non-extensible points on each side of a preshock cluster.
pub fn side_classes(polyline: &BoundaryPolyline, cluster: &std::ops::Range<usize>) -> (Option<BoundaryClass>, Option<BoundaryClass>) {
    let majority = |pts: &[BoundaryPoint]| -> Option<BoundaryClass> {
        let count = |c: BoundaryClass| pts.iter().filter(|p| p.class == c).count();
        let (s, c) = (count(BoundaryClass::Singular), count(BoundaryClass::Cauchy));
        match (s, c) {
            (0, 0) => None,
            _ if s > c => Some(BoundaryClass::Singular),
            _ => Some(BoundaryClass::Cauchy),
        }
    };
    let pts = &polyline.points;
    (majority(&pts[..cluster.start]), majority(&pts[cluster.end..]))
}

/// Counts of each class.
pub fn class_counts(polyline: &BoundaryPolyline) -> [(BoundaryClass, usize); 5] {
    let count = |c| polyline.points.iter().filter(|p| p.class == c).count();
    [
        (BoundaryClass::Preshock, count(BoundaryClass::Preshock)),
        (BoundaryClass::Singular, count(BoundaryClass::Singular)),
        (BoundaryClass::Cauchy, count(BoundaryClass::Cauchy)),
        (BoundaryClass::Extensible, count(BoundaryClass::Extensible)),
        (BoundaryClass::Ambiguous, count(BoundaryClass::Ambiguous)),
    ]
}

/// Largest `|dt/dx|` between points of the polyline thinned to arc length at least `min_arc` in `(t, x)`.
pub fn lipschitz_constant(polyline: &BoundaryPolyline, min_arc: f64) -> f64 {
    let mut kept: Vec<&BoundaryPoint> = Vec::new();
    for p in &polyline.points {
        match kept.last() {
            Some(q) if (p.x - q.x).hypot(p.t - q.t) < min_arc => {}
            _ => kept.push(p),
        }
    }
    kept.windows(2).map(|w| ((w[1].t - w[0].t) / (w[1].x - w[0].x)).abs()).fold(0.0, f64::max)
}

/// `min(|lambda_1|, lambda_N)` at `state`, the slowest spread of the extremal characteristics.
pub fn cone_speed(system: &SystemDefinition, state: &[f64]) -> Result<f64, MghdError> {
    let data = spectral::eigendecompose(system, state, &SpectralConfig::default())?;
    let n = data.eigenvalues.len();
    Ok(data.eigenvalues[0].abs().min(data.eigenvalues[n - 1]))
}

/// Angle between the two boundary branches leaving the corner `(t_c, x_c)`, from least-squares
/// `dx/dt` through the corner over points with `t - t_c` in `[lo, hi]`.
pub fn turning_angle(polyline: &BoundaryPolyline, cluster: &std::ops::Range<usize>, corner: (f64, f64), lo: f64, hi: f64) -> Option<f64> {
    let fit = |pts: &[BoundaryPoint]| -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for p in pts.iter().filter(|p| !p.on_top && p.class != BoundaryClass::Ambiguous) {
            let dt = p.t - corner.0;
            if dt >= lo && dt <= hi {
                num += dt * (p.x - corner.1);
                den += dt * dt;
            }
        }
        (den > 0.0).then(|| num / den)
    };
    let left = fit(&polyline.points[..cluster.start])?;
    let right = fit(&polyline.points[cluster.end..])?;
    Some((right.atan() - left.atan()).abs())
}

/// Per-`n` outcome of the perverse example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerverseEntry {
    pub n: usize,
    pub t_star: f64,
    pub x_star: f64,
    pub expected_x: f64,
    pub grid_step: f64,
    pub location_ok: bool,
    pub angle: Option<f64>,
    pub angle_ok: bool,
    pub preshock_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerverseReport {
    pub entries: Vec<PerverseEntry>,
    /// Smallest turning angle over `n`.
    pub min_angle: f64,
}

/// Width of the `n`-th dip of the perverse data.
pub fn perverse_width(n: usize) -> f64 {
    0.45 / (n * (n + 1)) as f64
}

/// `v(0, x) = 1 - sum_n w_n s((x - 1/n) / w_n)` with `s(z) = z b(z)`, and its slope.
pub fn perverse_data(x: f64, n_max: usize) -> (f64, f64) {
    let mut v = 1.0;
    let mut dv = 0.0;
    for n in 1..=n_max {
        let w = perverse_width(n);
        let z = (x - 1.0 / n as f64) / w;
        if z.abs() < 1.0 {
            v -= w * z * bump(z);
            dv -= bump(z) + z * bump_slope(z);
        }
    }
    (v, dv)
}

/// Settings for the perverse example windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerverseConfig {
    pub grid_points: usize,
    pub tau_step: f64,
    /// Stop level in units of the squared dip width.
    pub mu_stop: f64,
    /// Window half-width in units of the dip width.
    pub window: f64,
    /// Flat part and slope width of the trapezoid, in units of the dip width.
    pub eta: f64,
    pub delta1: f64,
    /// Box half-height `t_box - 1` in units of the squared dip width.
    pub box_height: f64,
    pub refined_steps: usize,
    pub angle_tolerance: f64,
}

impl Default for PerverseConfig {
    fn default() -> Self {
        Self {
            grid_points: 1024,
            tau_step: 2e-3,
            mu_stop: 2e-3,
            window: 1.0,
            eta: 0.6,
            delta1: 0.35,
            box_height: 0.4,
            refined_steps: 200,
            angle_tolerance: 0.05,
        }
    }
}

/// Runs each dip of the perverse data in its own window and measures preshock locations and corner angles.
pub fn perverse_harness(n_max: usize, cfg: &PerverseConfig) -> Result<PerverseReport, MghdError> {
    if n_max == 0 || n_max > 5 {
        return Err(MghdError::InvalidConfig(format!("n_max = {n_max} outside 1..=5")));
    }
    let system = builtin_system("burgers_transport", &SystemParams::default())?;
    let mut entries = Vec::new();
    for n in 1..=n_max {
        let w = perverse_width(n);
        let center = 1.0 / n as f64;
        let half = cfg.window * w;
        let grid = UniformGrid::spanning(center - half, center + half, cfg.grid_points);
        let init = initialize_from_states(&system, grid, |x| vec![perverse_data(x, n_max).0, 0.0])?;
        let height = cfg.box_height * w * w;
        let delta1 = cfg.delta1 * w;
        let mu_stop = cfg.mu_stop * w * w;
        let causal = CausalConfig {
            center,
            eta: cfg.eta * w,
            delta1,
            delta2: 0.1,
            lambda_star: 0.1 * delta1 / (2.0 * height) - 1.0,
            base_level: 1.0 - height,
            t_box: 1.0 + height,
            ladder_min: 2.0 * mu_stop,
            mu_zero_tol: 3.0 * mu_stop,
            ..CausalConfig::default()
        };
        let solver = causal.solver_settings(
            &SolverConfig { grid_points: cfg.grid_points, tau_step: cfg.tau_step, mu_stop, ..SolverConfig::default() },
            cfg.refined_steps,
        );
        let trajectory = evolve_to_stop(&system, init, &solver)?;
        let location = detect_preshock(&trajectory, 0.01)?;
        let frames = FrameSet::new(&trajectory)?;
        let x_star = frames.x(location.t_star.min(frames.tau_range().1), location.u0);
        let h = grid.step;
        let expected_x = 1.0 + center;
        let location_ok = (location.t_star - 1.0).abs() <= 2.0 * h && (x_star - expected_x).abs() <= 2.0 * h;
        let mut polyline = extract_boundary(&trajectory, &causal)?;
        classify_boundary(&mut polyline, &trajectory, &causal);
        let clusters = preshock_clusters(&polyline);
        let nearest = clusters.iter().min_by(|a, b| {
            let gap = |c: &std::ops::Range<usize>| {
                polyline.points[c.clone()].iter().map(|p| (p.u - location.u0).abs()).fold(f64::INFINITY, f64::min)
            };
            gap(a).total_cmp(&gap(b))
        });
        let angle = nearest.and_then(|c| {
            turning_angle(&polyline, c, (location.t_star, x_star), 0.2 * height, height)
        });
        let angle_ok = angle.is_some_and(|a| (a - std::f64::consts::FRAC_PI_2).abs() <= cfg.angle_tolerance);
        entries.push(PerverseEntry {
            n,
            t_star: location.t_star,
            x_star,
            expected_x,
            grid_step: h,
            location_ok,
            angle,
            angle_ok,
            preshock_clusters: clusters.len(),
        });
    }
    let min_angle = entries.iter().filter_map(|e| e.angle).fold(f64::INFINITY, f64::min);
    Ok(PerverseReport { entries, min_angle })
}

/// Least-squares `dx/dt` of the boundary points of one class.
pub fn class_slope(polyline: &BoundaryPolyline, class: BoundaryClass) -> Option<f64> {
    let pts: Vec<&BoundaryPoint> = polyline.points.iter().filter(|p| p.class == class && !p.on_top).collect();
    if pts.len() < 2 {
        return None;
    }
    let ts: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    Some(linear_fit(&ts, &xs).0)
}
