//! The cubic cusp `x = a0 |t| U + b0 U^3` and its homogeneous companions.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;
use crate::systems::GaugeParams;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum CuspError {
    #[error("cusp evaluated at t = {t} > 0")]
    DomainError { t: f64 },
    #[error("cusp constants must be positive (a0 = {a0}, b0 = {b0})")]
    NonPositiveConstants { a0: f64, b0: f64 },
}

/// `(U, M, D)` at one spacetime point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CuspPoint<T> {
    /// Cusp label `U(t, x)`.
    pub label: T,
    /// `M = 1 / (a0 |t| + 3 b0 U^2)`.
    pub density: T,
    /// `D = M^{-1/2}`.
    pub distance: T,
}

/// Cusp with constants `a0, b0 > 0` in the gauge that places the preshock at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CuspModel<T> {
    pub a0: T,
    pub b0: T,
    pub gauge: GaugeParams,
}

impl<T: Real> CuspModel<T> {
    pub fn new(a0: T, b0: T, gauge: GaugeParams) -> Result<Self, CuspError> {
        if !(a0 > T::zero() && b0 > T::zero()) {
            return Err(CuspError::NonPositiveConstants { a0: a0.to_f64_lossy(), b0: b0.to_f64_lossy() });
        }
        Ok(Self { a0, b0, gauge })
    }

    /// Evaluates the cusp at `(t, x)` with `t <= 0`.
    pub fn eval(&self, t: T, x: T) -> Result<CuspPoint<T>, CuspError> {
        if t > T::zero() {
            return Err(CuspError::DomainError { t: t.to_f64_lossy() });
        }
        let slope = self.a0 * t.abs();
        let label = monotone_cubic_root(self.b0, slope, x);
        let inverse = slope + T::lit(3.0) * self.b0 * label * label;
        Ok(CuspPoint { label, density: inverse.recip(), distance: inverse.sqrt() })
    }

    /// `-a0 t U + b0 U^3 - x`.
    pub fn residual(&self, t: T, x: T, label: T) -> T {
        -self.a0 * t * label + self.b0 * label * label * label - x
    }
}

/// Real root of `cubic * y^3 + linear * y = rhs` with `cubic > 0`, `linear >= 0`.
///
/// Cardano seed refined by Newton iterations kept inside a shrinking bracket.
pub fn monotone_cubic_root<T: Real>(cubic: T, linear: T, rhs: T) -> T {
    let zero = T::zero();
    if rhs == zero {
        return zero;
    }
    let sign = rhs.signum();
    let target = rhs.abs();
    let p = linear / cubic;
    let q = target / cubic;
    let f = |y: T| cubic * y * y * y + linear * y - target;

    let third = T::lit(1.0 / 3.0);
    let disc = (q * q * T::lit(0.25) + p * p * p / T::lit(27.0)).sqrt();
    let outer = (q * T::lit(0.5) + disc).powf(third);
    let mut y = if outer > zero { outer - p / (T::lit(3.0) * outer) } else { zero };

    let mut lo = zero;
    let mut hi = q.powf(third);
    if linear > zero {
        hi = hi.min(target / linear);
    }
    if !(y > lo && y < hi) {
        y = T::lit(0.5) * (lo + hi);
    }
    let tol = T::epsilon() * T::lit(4.0) * target.max(T::one());
    for _ in 0..100 {
        let value = f(y);
        if value.abs() <= tol {
            break;
        }
        if value > zero {
            hi = y;
        } else {
            lo = y;
        }
        let slope = T::lit(3.0) * cubic * y * y + linear;
        let mut next = if slope > zero { y - value / slope } else { lo - T::one() };
        if !(next > lo && next < hi) {
            next = T::lit(0.5) * (lo + hi);
        }
        if next == y {
            break;
        }
        y = next;
    }
    sign * y
}
