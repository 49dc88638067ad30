//! Background simple waves `Theta = Xi(theta)` and their nondegeneracy certificates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{argmin, local_minima, parabolic_refine};
use crate::scalar::Real;
use crate::spectral::{self, SpectralConfig, SpectralData, SpectralError};
use crate::systems::SystemDefinition;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimpleWaveError {
    #[error("integral curve left the state box at s = {s:.4}")]
    BoxExit { s: f64 },
    #[error("profile never compresses: the wave does not shock")]
    NoShock,
    #[error("nondegeneracy certificate failed: {0}")]
    CertificateFailure(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Smooth compactly supported bump `exp(1 - 1/(1 - x^2))` on `|x| < 1`.
pub fn bump<T: Real>(x: T) -> T {
    let one = T::one();
    let x2 = x * x;
    if x2 >= one {
        T::zero()
    } else {
        (one - one / (one - x2)).exp()
    }
}

/// Derivative of [`bump`].
pub fn bump_slope<T: Real>(x: T) -> T {
    let one = T::one();
    let x2 = x * x;
    if x2 >= one {
        T::zero()
    } else {
        let d = one - x2;
        -bump(x) * T::lit(2.0) * x / (d * d)
    }
}

/// Solution of `Xi' = r_{I0}(Xi)` sampled on a uniform parameter grid.
#[derive(Debug, Clone)]
pub struct IntegralCurve {
    step: f64,
    half_length: f64,
    states: Vec<Vec<f64>>,
    tangents: Vec<Vec<f64>>,
}

impl IntegralCurve {
    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn parameters(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| -self.half_length + self.step * k as f64).collect()
    }

    /// Cubic Hermite evaluation of `Xi(s)`, clamped to `[-a, a]`.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        self.eval_with_tangent(s).0
    }

    pub fn eval_with_tangent(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let last = self.states.len() - 1;
        let pos = ((s + self.half_length) / self.step).clamp(0.0, last as f64);
        let k = (pos.floor() as usize).min(last - 1);
        let t = pos - k as f64;
        let h = self.step;
        let (h00, h10, h01, h11) = (
            2.0 * t * t * t - 3.0 * t * t + 1.0,
            t * t * t - 2.0 * t * t + t,
            -2.0 * t * t * t + 3.0 * t * t,
            t * t * t - t * t,
        );
        let (d00, d10, d01, d11) = (
            6.0 * t * t - 6.0 * t,
            3.0 * t * t - 4.0 * t + 1.0,
            -6.0 * t * t + 6.0 * t,
            3.0 * t * t - 2.0 * t,
        );
        let (p0, p1) = (&self.states[k], &self.states[k + 1]);
        let (m0, m1) = (&self.tangents[k], &self.tangents[k + 1]);
        let n = p0.len();
        let mut value = vec![0.0; n];
        let mut slope = vec![0.0; n];
        for c in 0..n {
            value[c] = h00 * p0[c] + h10 * h * m0[c] + h01 * p1[c] + h11 * h * m1[c];
            slope[c] = (d00 * p0[c] + d10 * h * m0[c] + d01 * p1[c] + d11 * h * m1[c]) / h;
        }
        (value, slope)
    }

    /// `max |Xi'(s) - r_{I0}(Xi(s))|` at cell midpoints.
    pub fn residual(&self, system: &SystemDefinition) -> Result<f64, SpectralError> {
        let cfg = SpectralConfig::default();
        let mut worst: f64 = 0.0;
        let params = self.parameters();
        for w in params.windows(2) {
            let s = 0.5 * (w[0] + w[1]);
            let (state, slope) = self.eval_with_tangent(s);
            let data = spectral::eigendecompose(system, &state, &cfg)?;
            let r = data.right_vector(system.shock_index);
            let sign = if r.iter().zip(&slope).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for c in 0..state.len() {
                worst = worst.max((slope[c] - sign * r[c]).abs());
            }
        }
        Ok(worst)
    }
}

/// Integrates the shocking eigenvector field through `anchor` over `s in [-a, a]` with RK4.
pub fn integrate_state_curve(
    system: &SystemDefinition,
    anchor: &[f64],
    half_length: f64,
    step: f64,
) -> Result<IntegralCurve, SimpleWaveError> {
    let cfg = SpectralConfig::default();
    let cells = ((half_length / step).ceil() as usize).max(1);
    let h = half_length / cells as f64;
    let base = spectral::eigendecompose(system, anchor, &cfg)?;
    let index = system.shock_index;

    let field = |state: &[f64], guide: &SpectralData| -> Result<(Vec<f64>, SpectralData), SimpleWaveError> {
        if !system.contains(state) {
            return Err(SimpleWaveError::BoxExit { s: f64::NAN });
        }
        let data = spectral::eigendecompose_near(system, state, guide, &cfg)?;
        Ok((data.right.column(index).iter().copied().collect(), data))
    };

    let sweep = |direction: f64| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), SimpleWaveError> {
        let mut states = vec![anchor.to_vec()];
        let mut tangents = vec![base.right.column(index).iter().copied().collect::<Vec<f64>>()];
        let mut guide = base.clone();
        let mut y = anchor.to_vec();
        for k in 0..cells {
            let dh = direction * h;
            let shifted = |y: &[f64], k: &[f64], f: f64| -> Vec<f64> {
                y.iter().zip(k).map(|(a, b)| a + f * dh * b).collect()
            };
            let exit = |e: SimpleWaveError| match e {
                SimpleWaveError::BoxExit { .. } => SimpleWaveError::BoxExit { s: direction * h * (k + 1) as f64 },
                other => other,
            };
            let (k1, g1) = field(&y, &guide).map_err(exit)?;
            let (k2, _) = field(&shifted(&y, &k1, 0.5), &g1).map_err(exit)?;
            let (k3, _) = field(&shifted(&y, &k2, 0.5), &g1).map_err(exit)?;
            let (k4, _) = field(&shifted(&y, &k3, 1.0), &g1).map_err(exit)?;
            for c in 0..y.len() {
                y[c] += dh / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            let (tangent, g) = field(&y, &g1).map_err(exit)?;
            guide = g;
            states.push(y.clone());
            tangents.push(tangent);
        }
        Ok((states, tangents))
    };

    let (fwd_states, fwd_tangents) = sweep(1.0)?;
    let (bwd_states, bwd_tangents) = sweep(-1.0)?;
    let mut states: Vec<Vec<f64>> = bwd_states.into_iter().skip(1).rev().collect();
    let mut tangents: Vec<Vec<f64>> = bwd_tangents.into_iter().skip(1).rev().collect();
    states.extend(fwd_states);
    tangents.extend(fwd_tangents);
    Ok(IntegralCurve { step: h, half_length, states, tangents })
}

/// One compressive bump in the profile slope:
/// `-weight * bump((y - center) / width) * (1 - shape (y - center)^2 / 2 + skew (y - center)^3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpTerm {
    pub weight: f64,
    pub center: f64,
    pub width: f64,
    #[serde(default)]
    pub shape: f64,
    #[serde(default)]
    pub skew: f64,
}

impl BumpTerm {
    fn slope(&self, y: f64) -> f64 {
        let d = y - self.center;
        -self.weight * bump(d / self.width) * (1.0 - 0.5 * self.shape * d * d + self.skew * d * d * d)
    }
}

const GAUSS_NODES: [f64; 4] = [0.339_981_043_584_856, 0.861_136_311_594_052_6, -0.339_981_043_584_856, -0.861_136_311_594_052_6];
const GAUSS_WEIGHTS: [f64; 4] = [0.652_145_154_862_546_1, 0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

/// Raw profile `theta(y)` with `theta(origin) = 0` and slope given by a sum of bump terms.
#[derive(Debug, Clone)]
pub struct ThetaProfile {
    terms: Vec<BumpTerm>,
    origin: f64,
    lo: f64,
    cell: f64,
    cumulative: Vec<f64>,
}

impl ThetaProfile {
    pub fn new(terms: Vec<BumpTerm>) -> Self {
        assert!(!terms.is_empty(), "profile needs at least one term");
        let origin = terms[0].center;
        let lo = terms.iter().map(|t| t.center - t.width).fold(f64::INFINITY, f64::min);
        let hi = terms.iter().map(|t| t.center + t.width).fold(f64::NEG_INFINITY, f64::max);
        let finest = terms.iter().map(|t| t.width).fold(f64::INFINITY, f64::min);
        let cells = (((hi - lo) / finest) * 400.0).ceil().max(400.0) as usize;
        let cell = (hi - lo) / cells as f64;
        let mut profile = Self { terms, origin, lo, cell, cumulative: vec![0.0; cells + 1] };
        let mut acc = 0.0;
        for k in 0..cells {
            let a = lo + cell * k as f64;
            acc += profile.integrate(a, a + cell);
            profile.cumulative[k + 1] = acc;
        }
        let shift = profile.primitive(origin);
        for c in &mut profile.cumulative {
            *c -= shift;
        }
        profile
    }

    /// Single symmetric-or-skewed bump, the default family.
    pub fn single(width: f64, shape: f64, skew: f64, center: f64) -> Self {
        Self::new(vec![BumpTerm { weight: 1.0, center, width, shape, skew }])
    }

    pub fn terms(&self) -> &[BumpTerm] {
        &self.terms
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Support `[lo, hi]` of the slope.
    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.lo + self.cell * (self.cumulative.len() - 1) as f64)
    }

    pub fn slope(&self, y: f64) -> f64 {
        self.terms.iter().map(|t| t.slope(y)).sum()
    }

    fn integrate(&self, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        GAUSS_NODES
            .iter()
            .zip(GAUSS_WEIGHTS)
            .map(|(x, w)| w * self.slope(mid + half * x))
            .sum::<f64>()
            * half
    }

    fn primitive(&self, y: f64) -> f64 {
        let last = self.cumulative.len() - 1;
        let pos = ((y - self.lo) / self.cell).clamp(0.0, last as f64);
        let k = (pos.floor() as usize).min(last);
        let a = self.lo + self.cell * k as f64;
        if k == last || y <= a {
            return self.cumulative[k];
        }
        self.cumulative[k] + self.integrate(a, y.min(a + self.cell))
    }

    pub fn value(&self, y: f64) -> f64 {
        self.primitive(y)
    }
}

/// Mild nondegeneracy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MildParams {
    pub eta: f64,
    pub delta1: f64,
    pub delta2: f64,
}

/// Which nondegeneracy condition to certify.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nondegeneracy {
    Mild(MildParams),
    Strong { uniqueness_margin: f64 },
}

/// Outcome of a nondegeneracy check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NondegeneracyCertificate {
    /// The shocking field is extremal.
    Extremal,
    /// Confinement interval `[u1, u2]` found.
    Confined { u1: f64, u2: f64 },
    /// Unique minimum of the compression rate with positive curvature.
    Strong { min_location: f64, min_value: f64, third_derivative: f64 },
}

/// Background wave with normalized profile `theta_0(x) = theta_raw(origin + scale (x - origin))`.
#[derive(Debug, Clone)]
pub struct SimpleWave {
    system: SystemDefinition,
    curve: IntegralCurve,
    profile: ThetaProfile,
    scale: f64,
    shock_time: f64,
    min_location: f64,
    speed_range: (f64, f64),
}

impl SimpleWave {
    pub fn system(&self) -> &SystemDefinition {
        &self.system
    }

    pub fn curve(&self) -> &IntegralCurve {
        &self.curve
    }

    pub fn profile(&self) -> &ThetaProfile {
        &self.profile
    }

    /// Spatial rescaling applied to the raw profile.
    pub fn normalization(&self) -> f64 {
        self.scale
    }

    /// Label where the compression rate is most negative.
    pub fn min_location(&self) -> f64 {
        self.min_location
    }

    /// Extent in `x` of the profile's compressive support.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.profile.support();
        let o = self.profile.origin();
        (o + (lo - o) / self.scale, o + (hi - o) / self.scale)
    }

    pub fn theta0(&self, x: f64) -> f64 {
        let o = self.profile.origin();
        self.profile.value(o + self.scale * (x - o))
    }

    pub fn theta0_slope(&self, x: f64) -> f64 {
        let o = self.profile.origin();
        self.scale * self.profile.slope(o + self.scale * (x - o))
    }

    /// Background state `Xi(theta_0(u))`, constant in `tau` at fixed label `u`.
    pub fn state_at_label(&self, u: f64) -> Vec<f64> {
        self.curve.eval(self.theta0(u))
    }

    /// Compression rate `(Lambda . r_{I0})(Theta) theta_0'(u) = L mu = d_u lambda`.
    pub fn compression_rate(&self, u: f64) -> f64 {
        let slope = self.theta0_slope(u);
        if slope == 0.0 {
            return 0.0;
        }
        let state = self.state_at_label(u);
        let tensors = spectral::compute_xi(&self.system, &state, &SpectralConfig::default())
            .expect("wave states lie in the hyperbolic region");
        let (_, tangent) = self.curve.eval_with_tangent(self.theta0(u));
        let i0 = self.system.shock_index;
        let growth: f64 = (0..tangent.len()).map(|s| tensors.eigenvalue_gradient[(i0, s)] * tangent[s]).sum();
        growth * slope
    }

    /// Shocking speed of the background at label `u`.
    pub fn speed_at_label(&self, u: f64) -> f64 {
        let state = self.state_at_label(u);
        spectral::eigendecompose(&self.system, &state, &SpectralConfig::default())
            .expect("wave states lie in the hyperbolic region")
            .eigenvalues[self.system.shock_index]
    }

    /// Closed-form `mu(tau, u) = 1 + tau * compression_rate(u)`.
    pub fn mu_exact(&self, tau: f64, u: f64) -> f64 {
        1.0 + tau * self.compression_rate(u)
    }

    /// Closed-form `x(tau, u) = u + tau * lambda(u)`.
    pub fn x_exact(&self, tau: f64, u: f64) -> f64 {
        u + tau * self.speed_at_label(u)
    }

    pub fn shock_time(&self) -> f64 {
        self.shock_time
    }

    /// Foot `x0` of the shocking characteristic through `(t, x)`, by bisection.
    pub fn foot(&self, t: f64, x: f64) -> f64 {
        let (lo_speed, hi_speed) = self.speed_range;
        let mut lo = x - t * hi_speed - 1e-9;
        let mut hi = x - t * lo_speed + 1e-9;
        if hi < lo {
            std::mem::swap(&mut lo, &mut hi);
        }
        let g = |x0: f64| x0 + t * self.speed_at_label(x0) - x;
        crate::numerics::bisect(g, lo, hi, 1e-12)
    }

    /// Exact state `Theta(t, x)` for `t < t*`.
    pub fn evaluate(&self, t: f64, x: f64) -> Vec<f64> {
        self.state_at_label(self.foot(t, x))
    }

    /// Certifies mild or strong nondegeneracy of the normalized wave.
    pub fn check_nondegeneracy(&self, kind: Nondegeneracy) -> Result<NondegeneracyCertificate, SimpleWaveError> {
        let (lo, hi) = self.support();
        let samples = 4001;
        let step = (hi - lo) / (samples - 1) as f64;
        let us: Vec<f64> = (0..samples).map(|k| lo + step * k as f64).collect();
        let rates: Vec<f64> = us.iter().map(|&u| self.compression_rate(u)).collect();
        let inf = rates.iter().copied().fold(f64::INFINITY, f64::min);
        match kind {
            Nondegeneracy::Mild(p) => {
                let n = self.system.dim();
                if self.system.shock_index == 0 || self.system.shock_index == n - 1 {
                    return Ok(NondegeneracyCertificate::Extremal);
                }
                let horizon = self.shock_time + p.delta1;
                let bad: Vec<f64> = us
                    .iter()
                    .zip(&rates)
                    .filter(|(_, &m)| 1.0 + horizon * m < p.delta2)
                    .map(|(&u, _)| u)
                    .collect();
                let (u1, u2) = match (bad.first(), bad.last()) {
                    (Some(&a), Some(&b)) => (a - step, b + step),
                    _ => {
                        let u = us[argmin(&rates)];
                        (u, u)
                    }
                };
                if u2 - u1 > 2.0 * p.eta {
                    return Err(SimpleWaveError::CertificateFailure(format!(
                        "clause (ii): low-mu set [{u1:.4}, {u2:.4}] wider than 2 eta = {:.4}",
                        2.0 * p.eta
                    )));
                }
                let threshold = 0.75 * inf;
                let window_ok = us
                    .iter()
                    .zip(&rates)
                    .filter(|(&u, _)| u >= u1 - p.delta1 && u <= u2 + p.delta1)
                    .all(|(_, &m)| m <= threshold);
                let lo_ok = u1 - p.delta1 >= lo && u2 + p.delta1 <= hi;
                if !window_ok || !lo_ok {
                    return Err(SimpleWaveError::CertificateFailure(format!(
                        "clause (ii): L mu exceeds 3/4 inf L mu on [{:.4}, {:.4}]",
                        u1 - p.delta1,
                        u2 + p.delta1
                    )));
                }
                Ok(NondegeneracyCertificate::Confined { u1, u2 })
            }
            Nondegeneracy::Strong { uniqueness_margin } => {
                let j = argmin(&rates);
                let (offset, min_value) = parabolic_refine(&rates, j);
                let location = us[j] + offset * step;
                let separated = local_minima(&rates)
                    .into_iter()
                    .filter(|&k| (us[k] - us[j]).abs() > 4.0 * step)
                    .all(|k| rates[k] > min_value + uniqueness_margin);
                if !separated {
                    return Err(SimpleWaveError::CertificateFailure(
                        "strong: minimum of the compression rate is not unique".into(),
                    ));
                }
                let h = 1e-3;
                let m = |u: f64| self.compression_rate(u);
                let third = (-m(location + 2.0 * h) + 16.0 * m(location + h) - 30.0 * m(location)
                    + 16.0 * m(location - h)
                    - m(location - 2.0 * h))
                    / (12.0 * h * h);
                if third <= 0.0 {
                    return Err(SimpleWaveError::CertificateFailure(format!(
                        "strong: third derivative {third:.3e} not positive at the minimum"
                    )));
                }
                Ok(NondegeneracyCertificate::Strong { min_location: location, min_value, third_derivative: third })
            }
        }
    }
}

/// Golden-section minimization of `f` on `[a, b]`.
fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Builds the wave `Xi(theta_0)`; with `normalize`, rescales `x` so that the shock time is one.
pub fn build_simple_wave(
    system: &SystemDefinition,
    curve: IntegralCurve,
    profile: ThetaProfile,
    normalize: bool,
) -> Result<SimpleWave, SimpleWaveError> {
    let (lo, hi) = profile.support();
    let (theta_min, theta_max) = (profile.value(hi), profile.value(lo));
    let a = curve.half_length();
    if theta_min.min(theta_max) < -a - 1e-12 || theta_min.max(theta_max) > a + 1e-12 {
        return Err(SimpleWaveError::BoxExit { s: if theta_max.abs() > theta_min.abs() { theta_max } else { theta_min } });
    }
    let mut wave = SimpleWave {
        system: system.clone(),
        curve,
        profile,
        scale: 1.0,
        shock_time: f64::INFINITY,
        min_location: 0.0,
        speed_range: (0.0, 0.0),
    };
    let speeds: Vec<f64> = wave
        .curve
        .states()
        .iter()
        .map(|s| {
            spectral::eigendecompose(system, s, &SpectralConfig::default())
                .map(|d| d.eigenvalues[system.shock_index])
        })
        .collect::<Result<_, _>>()?;
    wave.speed_range = (
        speeds.iter().copied().fold(f64::INFINITY, f64::min),
        speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );

    let samples = 4001;
    let step = (hi - lo) / (samples - 1) as f64;
    let rates: Vec<f64> = (0..samples).map(|k| wave.compression_rate(lo + step * k as f64)).collect();
    let j = argmin(&rates);
    if rates[j] >= 0.0 {
        return Err(SimpleWaveError::NoShock);
    }
    let (location, min_rate) = golden_min(|u| wave.compression_rate(u), lo + step * j as f64 - step, lo + step * j as f64 + step, 1e-10);
    let min_rate = min_rate.min(rates[j]);
    if normalize {
        let o = wave.profile.origin();
        wave.scale = -1.0 / min_rate;
        wave.min_location = o + (location - o) / wave.scale;
        wave.shock_time = 1.0;
    } else {
        wave.min_location = location;
        wave.shock_time = -1.0 / min_rate;
    }
    Ok(wave)
}
