//! Preshock detection, modulation fits and comparison with the cubic cusp.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cusp::{CuspError, CuspModel};
use crate::eikonal::{EikonalField, Trajectory};
use crate::numerics::{argmin, centered_derivative, centered_second_derivative, linear_fit, local_minima, median};
use crate::spectral::{self, SpectralConfig, SpectralError};
use crate::systems::{GaugeParams, SystemDefinition};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PreshockError {
    #[error("trajectory ended without reaching the shock")]
    NoShock,
    #[error("second local minimum {second:.3e} too close to the global minimum {min:.3e}")]
    NonUniquePreshock { min: f64, second: f64 },
    #[error("fit window too close to the preshock at tau = {tau:.6}")]
    FitDegenerate { tau: f64 },
    #[error("fewer than two frames in the fit window")]
    EmptyWindow,
    #[error("only {found} resolvable shells (need 3)")]
    InsufficientShells { found: usize },
    #[error("corrector design matrix condition number {condition:.3e}")]
    IllConditionedFit { condition: f64 },
    #[error(transparent)]
    Cusp(#[from] CuspError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Minimum of `mu` on a frame: location, value and curvature `d_uu mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuMinimum {
    pub location: f64,
    pub value: f64,
    pub curvature: f64,
}

/// Minimum of the interpolated `mu`, found by Newton steps on `d_u mu` from the smallest node.
pub fn refined_minimum(field: &EikonalField) -> MuMinimum {
    let grid = &field.grid;
    let slope = centered_derivative(&field.mu, grid.step);
    let curv = centered_second_derivative(&field.mu, grid.step);
    let j = argmin(&field.mu);
    let mut u = grid.node(j);
    for _ in 0..6 {
        let c = grid.interp(&curv, u);
        if c <= 0.0 {
            break;
        }
        let step = grid.interp(&slope, u) / c;
        if step.abs() > grid.step {
            break;
        }
        u -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    MuMinimum { location: u, value: grid.interp(&field.mu, u), curvature: grid.interp(&curv, u) }
}

/// First zero of `mu`, `(t*, u0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreshockLocation {
    pub t_star: f64,
    pub u0: f64,
}

/// Locates the preshock from the last two frames before the stop.
///
/// `margin` is the required gap between the global minimum of `mu` and any other local minimum.
pub fn detect_preshock(trajectory: &Trajectory, margin: f64) -> Result<PreshockLocation, PreshockError> {
    if trajectory.first_stop_tau.is_none() {
        return Err(PreshockError::NoShock);
    }
    let frames = trajectory.pre_stop_frames();
    if frames.len() < 2 {
        return Err(PreshockError::EmptyWindow);
    }
    let last = &frames[frames.len() - 1];
    let prev = &frames[frames.len() - 2];
    let j = argmin(&last.mu);
    let global = last.mu[j];
    let second = local_minima(&last.mu)
        .into_iter()
        .filter(|&k| k.abs_diff(j) > 3)
        .map(|k| last.mu[k])
        .fold(f64::INFINITY, f64::min);
    if second - global < margin {
        return Err(PreshockError::NonUniquePreshock { min: global, second });
    }
    let a = refined_minimum(prev);
    let b = refined_minimum(last);
    let t_star = if a.value > b.value {
        last.tau + b.value * (last.tau - prev.tau) / (a.value - b.value)
    } else {
        last.tau
    };
    Ok(PreshockLocation { t_star, u0: b.location })
}

/// Modulation sample on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModulationSample {
    pub tau: f64,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
}

/// Fit window ending `width / 4` before the preshock and the annulus in `|u - gamma|` for remainders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitWindow {
    pub width: f64,
    pub remainder_inner: f64,
    pub remainder_outer: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { width: 0.2, remainder_inner: 0.05, remainder_outer: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreshockFit {
    pub t_star: f64,
    pub u0: f64,
    pub samples: Vec<ModulationSample>,
    pub a0: f64,
    pub b0: f64,
    /// `max |mu - a (t* - tau) - 3 b (u - gamma)^2| / |u - gamma|^3` over the window.
    pub mu_remainder: f64,
    /// `max |x - x(gamma) - a (t* - tau)(u - gamma) - b (u - gamma)^3| / (u - gamma)^4` over the window.
    pub x_remainder: f64,
}

/// Fits `a(tau)`, `b(tau)` on frames in the window and extrapolates them linearly to `t*`.
pub fn fit_modulation(
    trajectory: &Trajectory,
    location: PreshockLocation,
    window: FitWindow,
) -> Result<PreshockFit, PreshockError> {
    let t_star = location.t_star;
    let lo = t_star - window.width;
    let hi = t_star - 0.25 * window.width;
    let frames: Vec<&EikonalField> =
        trajectory.pre_stop_frames().iter().filter(|f| f.tau >= lo - 1e-12 && f.tau <= hi + 1e-12).collect();
    if frames.len() < 2 {
        return Err(PreshockError::EmptyWindow);
    }
    let tau_step = trajectory.config.tau_step;
    let mut samples = Vec::with_capacity(frames.len());
    let mut mu_remainder: f64 = 0.0;
    let mut x_remainder: f64 = 0.0;
    for f in &frames {
        let gap = t_star - f.tau;
        if gap < 10.0 * tau_step {
            return Err(PreshockError::FitDegenerate { tau: f.tau });
        }
        let m = refined_minimum(f);
        let a = m.value / gap;
        let b = m.curvature / 6.0;
        samples.push(ModulationSample { tau: f.tau, gamma: m.location, a, b });
        let x_gamma = f.grid.interp(&f.x, m.location);
        for j in 0..f.len() {
            let d = f.grid.node(j) - m.location;
            if d.abs() < window.remainder_inner || d.abs() > window.remainder_outer {
                continue;
            }
            let mu_model = a * gap + 3.0 * b * d * d;
            mu_remainder = mu_remainder.max((f.mu[j] - mu_model).abs() / d.abs().powi(3));
            let x_model = x_gamma + a * gap * d + b * d * d * d;
            x_remainder = x_remainder.max((f.x[j] - x_model).abs() / d.powi(4));
        }
    }
    let tail_start = hi - 0.25 * (hi - lo);
    let mut tail: Vec<&ModulationSample> = samples.iter().filter(|s| s.tau >= tail_start - 1e-12).collect();
    if tail.len() < 2 {
        tail = samples[samples.len() - 2..].iter().collect();
    }
    let taus: Vec<f64> = tail.iter().map(|s| s.tau).collect();
    let (sa, ia) = linear_fit(&taus, &tail.iter().map(|s| s.a).collect::<Vec<_>>());
    let (sb, ib) = linear_fit(&taus, &tail.iter().map(|s| s.b).collect::<Vec<_>>());
    Ok(PreshockFit {
        t_star,
        u0: location.u0,
        samples,
        a0: sa * t_star + ia,
        b0: sb * t_star + ib,
        mu_remainder,
        x_remainder,
    })
}

fn shift_field(field: &EikonalField, gauge: &GaugeParams, u0: f64, state: &[f64]) -> EikonalField {
    let mut out = field.clone();
    out.tau = field.tau + gauge.t0;
    out.grid.start -= u0;
    for (c, s) in out.psi.iter_mut().zip(state) {
        c.iter_mut().for_each(|v| *v -= s);
    }
    for x in out.x.iter_mut() {
        *x = gauge.apply(field.tau, *x).1;
    }
    for row in out.speeds.iter_mut() {
        row.iter_mut().for_each(|l| *l -= gauge.v);
    }
    out
}

/// State and position `(psi*, x*)` at the preshock, extrapolated from the last two frames before the stop.
pub fn preshock_point(trajectory: &Trajectory, location: PreshockLocation) -> Result<(Vec<f64>, f64), PreshockError> {
    let frames = trajectory.pre_stop_frames();
    if frames.len() < 2 {
        return Err(PreshockError::EmptyWindow);
    }
    let last = &frames[frames.len() - 1];
    let prev = &frames[frames.len() - 2];
    let u0 = location.u0;
    let ahead = location.t_star - last.tau;
    let dt = last.tau - prev.tau;
    let state: Vec<f64> = (0..last.dim())
        .map(|c| {
            let now = last.grid.interp(&last.psi[c], u0);
            let before = prev.grid.interp(&prev.psi[c], u0);
            now + ahead * (now - before) / dt
        })
        .collect();
    let x_star = last.grid.interp(&last.x, u0) + ahead * last.grid.interp(last.shock_speed(), u0);
    Ok((state, x_star))
}

/// Moves the preshock to the spacetime origin with zero speed, zero label and zero state.
pub fn gauge_normalize_at_preshock(
    system: &SystemDefinition,
    trajectory: &Trajectory,
    fit: &PreshockFit,
) -> Result<(SystemDefinition, Trajectory, CuspModel<f64>), PreshockError> {
    let u0 = fit.u0;
    let (state, x_star) = preshock_point(trajectory, PreshockLocation { t_star: fit.t_star, u0 })?;
    let speed = spectral::eigendecompose(system, &state, &SpectralConfig::default())?.eigenvalues[system.shock_index];
    let gauge = GaugeParams { t0: -fit.t_star, x0: x_star - speed * fit.t_star, v: speed };
    let normalized = system.galilean_transform(&gauge).translated(&state);
    let map = |f: &EikonalField| shift_field(f, &gauge, u0, &state);
    let shifted = Trajectory {
        system: normalized.clone(),
        frames: trajectory.frames.iter().map(map).collect(),
        checkpoints: trajectory.checkpoints.iter().map(map).collect(),
        min_mu_history: trajectory.min_mu_history.iter().map(|&(t, m, u)| (t + gauge.t0, m, u - u0)).collect(),
        stop_reason: trajectory.stop_reason,
        stop_tau: trajectory.stop_tau + gauge.t0,
        first_stop_tau: trajectory.first_stop_tau.map(|t| t + gauge.t0),
        t_star_estimate: trajectory.t_star_estimate.map(|t| t + gauge.t0),
        config: trajectory.config.clone(),
    };
    let model = CuspModel::new(fit.a0, fit.b0, gauge)?;
    Ok((normalized, shifted, model))
}

/// One node of a normalized frame evaluated against the cusp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CuspSample {
    pub t: f64,
    pub x: f64,
    pub u: f64,
    pub mu: f64,
    /// Shocking component `l^{I0}(0) . psi`.
    pub shock_component: f64,
    pub label: f64,
    pub density: f64,
    pub distance: f64,
}

/// Samples with `t < 0` and cusp distance at most `max_distance` from a normalized trajectory.
pub fn cusp_samples(
    system: &SystemDefinition,
    trajectory: &Trajectory,
    model: &CuspModel<f64>,
    max_distance: f64,
) -> Result<Vec<CuspSample>, PreshockError> {
    let origin = vec![0.0; system.dim()];
    let data = spectral::eigendecompose(system, &origin, &SpectralConfig::default())?;
    let i0 = system.shock_index;
    let mut out = Vec::new();
    for f in trajectory.pre_stop_frames().iter().filter(|f| f.tau < 0.0) {
        for j in 0..f.len() {
            let p = model.eval(f.tau, f.x[j])?;
            if p.distance > max_distance {
                continue;
            }
            let state = f.state(j);
            let shock_component: f64 = (0..state.len()).map(|s| data.left[(i0, s)] * state[s]).sum();
            out.push(CuspSample {
                t: f.tau,
                x: f.x[j],
                u: f.grid.node(j),
                mu: f.mu[j],
                shock_component,
                label: p.label,
                density: p.density,
                distance: p.distance,
            });
        }
    }
    Ok(out)
}

/// `-a0 / (d_{I0} lambda)(0)`, the predicted slope of the shocking component against the cusp label.
pub fn leading_state_coefficient(system: &SystemDefinition, model: &CuspModel<f64>) -> Result<f64, PreshockError> {
    let origin = vec![0.0; system.dim()];
    let t = spectral::compute_xi(system, &origin, &SpectralConfig::default())?;
    let i0 = system.shock_index;
    Ok(-model.a0 / t.growth(i0, i0))
}

/// Dyadic shells `[d_hi / 2, d_hi]` with `d_hi = max_distance / 2^k`, down to `min_distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShellConfig {
    pub min_distance: f64,
    pub max_distance: f64,
    pub min_samples: usize,
    /// Shells with inner radius below `resolution` (in label units) are skipped.
    pub resolution: f64,
}

impl Default for ShellConfig {
    fn default() -> Self {
        Self { min_distance: 1e-3, max_distance: 1e-1, min_samples: 8, resolution: 0.0 }
    }
}

impl ShellConfig {
    pub fn shells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut hi = self.max_distance;
        while hi / 2.0 >= self.min_distance * (1.0 - 1e-12) {
            out.push((hi / 2.0, hi));
            hi /= 2.0;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShellReport {
    pub d_lo: f64,
    pub d_hi: f64,
    pub samples: usize,
    /// `sup |u - U| / D^2`.
    pub ratio_u: f64,
    /// `sup |1/mu - M| D`.
    pub ratio_mu: f64,
    /// Least-squares slope of the shocking component against `U`.
    pub state_coefficient: f64,
    pub state_coefficient_relerr: f64,
    /// Smallest `c >= 1` with `|U|` in `[1/c, c] * min(|x|^{1/3}, |x|/|t|)`.
    pub corridor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadingOrderReport {
    pub predicted_state_coefficient: f64,
    pub shells: Vec<ShellReport>,
    /// `max ratio_u <= 2 median ratio_u` over the shells.
    pub bounded: bool,
}

fn in_shell(s: &CuspSample, (lo, hi): (f64, f64)) -> bool {
    s.distance >= lo && s.distance < hi
}

/// Per-shell comparison of the normalized solution with the cusp.
pub fn validate_leading_order(
    samples: &[CuspSample],
    predicted_state_coefficient: f64,
    shells: &ShellConfig,
) -> Result<LeadingOrderReport, PreshockError> {
    let mut reports = Vec::new();
    for shell in shells.shells() {
        if shell.0 < shells.resolution {
            continue;
        }
        let inside: Vec<&CuspSample> = samples.iter().filter(|s| in_shell(s, shell)).collect();
        if inside.len() < shells.min_samples {
            continue;
        }
        let mut ratio_u: f64 = 0.0;
        let mut ratio_mu: f64 = 0.0;
        let mut corridor: f64 = 1.0;
        let (mut num, mut den) = (0.0, 0.0);
        for s in &inside {
            ratio_u = ratio_u.max((s.u - s.label).abs() / (s.distance * s.distance));
            ratio_mu = ratio_mu.max((1.0 / s.mu - s.density).abs() * s.distance);
            num += s.shock_component * s.label;
            den += s.label * s.label;
            if s.x != 0.0 {
                let scale = s.x.abs().cbrt().min(if s.t != 0.0 { s.x.abs() / s.t.abs() } else { f64::INFINITY });
                let r = s.label.abs() / scale;
                corridor = corridor.max(r).max(1.0 / r);
            }
        }
        let coefficient = if den > 0.0 { num / den } else { 0.0 };
        reports.push(ShellReport {
            d_lo: shell.0,
            d_hi: shell.1,
            samples: inside.len(),
            ratio_u,
            ratio_mu,
            state_coefficient: coefficient,
            state_coefficient_relerr: ((coefficient - predicted_state_coefficient) / predicted_state_coefficient).abs(),
            corridor,
        });
    }
    if reports.len() < 3 {
        return Err(PreshockError::InsufficientShells { found: reports.len() });
    }
    let ratios: Vec<f64> = reports.iter().map(|r| r.ratio_u).collect();
    let bounded = ratios.iter().copied().fold(0.0, f64::max) <= 2.0 * median(&ratios);
    Ok(LeadingOrderReport { predicted_state_coefficient, shells: reports, bounded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectorShell {
    pub d_lo: f64,
    pub d_hi: f64,
    /// `sup |u - U| / D^3` before the fit.
    pub pre_fit: f64,
    /// `sup |u - U - q_2| / D^3` after the fit.
    pub post_fit: f64,
}

/// Second-order corrector `q_2 = -M (c20 t^2 + c12 t U^2 + c04 U^4)`; the first is `q_1 = U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectorSet {
    pub c20: f64,
    pub c12: f64,
    pub c04: f64,
    pub condition: f64,
    pub shells: Vec<CorrectorShell>,
}

impl CorrectorSet {
    pub fn second_order(&self, t: f64, label: f64, density: f64) -> f64 {
        -density * (self.c20 * t * t + self.c12 * t * label * label + self.c04 * label.powi(4))
    }
}

/// Least-squares fit of `(u - U) / M` on the monomials `t^2, t U^2, U^4` over the annulus `fit_shell`.
pub fn fit_correctors(
    samples: &[CuspSample],
    fit_shell: (f64, f64),
    residual_shells: &ShellConfig,
) -> Result<CorrectorSet, PreshockError> {
    let rows: Vec<&CuspSample> = samples.iter().filter(|s| in_shell(s, fit_shell)).collect();
    if rows.len() < 3 {
        return Err(PreshockError::IllConditionedFit { condition: f64::INFINITY });
    }
    let scale = fit_shell.1.powi(4);
    let mut design = DMatrix::zeros(rows.len(), 3);
    let mut target = DVector::zeros(rows.len());
    for (k, s) in rows.iter().enumerate() {
        let w = s.label;
        design[(k, 0)] = s.t * s.t / scale;
        design[(k, 1)] = s.t * w * w / scale;
        design[(k, 2)] = w.powi(4) / scale;
        target[k] = -(s.u - s.label) / s.density / scale;
    }
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > 1e8 {
        return Err(PreshockError::IllConditionedFit { condition });
    }
    let coef = svd.solve(&target, 1e-14).expect("SVD has both factors");
    let mut set = CorrectorSet { c20: coef[0], c12: coef[1], c04: coef[2], condition, shells: Vec::new() };
    for shell in residual_shells.shells() {
        let inside: Vec<&CuspSample> = samples.iter().filter(|s| in_shell(s, shell)).collect();
        if inside.len() < residual_shells.min_samples {
            continue;
        }
        let (mut pre, mut post): (f64, f64) = (0.0, 0.0);
        for s in inside {
            let v = s.u - s.label;
            let d3 = s.distance.powi(3);
            pre = pre.max(v.abs() / d3);
            post = post.max((v - set.second_order(s.t, s.label, s.density)).abs() / d3);
        }
        set.shells.push(CorrectorShell { d_lo: shell.0, d_hi: shell.1, pre_fit: pre, post_fit: post });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_shells_cover_default_range() {
        let shells = ShellConfig::default().shells();
        assert_eq!(shells.len(), 6);
        assert_eq!(shells[0], (0.05, 0.1));
        assert!(shells.last().unwrap().0 >= 1e-3);
    }

    fn exact_cusp_samples(model: &CuspModel<f64>, extra: impl Fn(f64, f64, f64) -> f64) -> Vec<CuspSample> {
        let mut out = Vec::new();
        for i in 1..=40 {
            let t = -2e-3 * i as f64;
            for k in -40..=40 {
                let label = 0.005 * k as f64;
                let u = label + extra(t, label, model.a0 * t.abs() + 3.0 * model.b0 * label * label);
                let x = model.a0 * t.abs() * label + model.b0 * label.powi(3);
                let p = model.eval(t, x).unwrap();
                out.push(CuspSample {
                    t,
                    x,
                    u,
                    mu: 1.0 / p.density,
                    shock_component: -label,
                    label: p.label,
                    density: p.density,
                    distance: p.distance,
                });
            }
        }
        out
    }

    #[test]
    fn exact_cubic_has_no_corrector() {
        let model = CuspModel::new(1.0, 1.0 / 6.0, GaugeParams::identity()).unwrap();
        let samples = exact_cusp_samples(&model, |_, _, _| 0.0);
        let set = fit_correctors(&samples, (0.05, 0.1), &ShellConfig::default()).unwrap();
        assert!(set.c20.abs() < 1e-6 && set.c12.abs() < 1e-6 && set.c04.abs() < 1e-6);
    }

    #[test]
    fn planted_corrector_is_recovered() {
        let model = CuspModel::new(1.0, 0.5, GaugeParams::identity()).unwrap();
        let samples = exact_cusp_samples(&model, |t, w, inv| -(0.3 * t * t - 0.2 * t * w * w + 0.7 * w.powi(4)) / inv);
        let set = fit_correctors(&samples, (0.05, 0.1), &ShellConfig::default()).unwrap();
        assert!((set.c20 - 0.3).abs() < 1e-8);
        assert!((set.c12 + 0.2).abs() < 1e-8);
        assert!((set.c04 - 0.7).abs() < 1e-8);
    }
}
