//! Concrete hyperbolic systems and Galilean gauge changes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simplewave::SimpleWave;
use crate::spectral::{self, SpectralError};

/// Evaluator of the advection matrix `A(psi)` of `psi_t + A(psi) psi_x = 0`.
pub trait Advection: Send + Sync {
    fn dim(&self) -> usize;

    fn matrix(&self, state: &[f64]) -> DMatrix<f64>;

    /// Analytic `dA/dpsi^component`, when available.
    fn matrix_derivative(&self, _state: &[f64], _component: usize) -> Option<DMatrix<f64>> {
        None
    }

    /// Closed-form eigenvalues and right eigenvectors (any order, any sign), when available.
    fn eigensystem(&self, _state: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        None
    }
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("system fails its construction certificate: {0}")]
    Certificate(#[from] SpectralError),
}

/// Shift `t -> t + t0` and shear `x -> x - v t - x0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeParams {
    pub t0: f64,
    pub x0: f64,
    pub v: f64,
}

impl GaugeParams {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Maps original `(t, x)` to gauged coordinates.
    pub fn apply(&self, t: f64, x: f64) -> (f64, f64) {
        (t + self.t0, x - self.v * t - self.x0)
    }

    /// Maps gauged coordinates back to the original frame.
    pub fn invert(&self, t_bar: f64, x_bar: f64) -> (f64, f64) {
        let t = t_bar - self.t0;
        (t, x_bar + self.v * t + self.x0)
    }

    /// The gauge obtained by applying `self` first and then `next`.
    pub fn then(&self, next: &GaugeParams) -> GaugeParams {
        GaugeParams {
            t0: self.t0 + next.t0,
            x0: self.x0 + next.x0 + next.v * self.t0,
            v: self.v + next.v,
        }
    }
}

/// Parameters of the builtin systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Pressure exponent of the p-system, `p(v) = v^(-gamma)`.
    pub gamma: f64,
    /// Which extremal field of the p-system shocks: `0` (slow) or `1` (fast).
    pub p_field: usize,
    /// Amplitude of the outer-eigenvalue coupling in the synthetic three-field system.
    pub coupling: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self { gamma: 1.0, p_field: 1, coupling: 0.1 }
    }
}

/// A strictly hyperbolic system with its shocking field and state-space box.
#[derive(Clone)]
pub struct SystemDefinition {
    pub name: String,
    /// Zero-based index of the shocking field in increasing eigenvalue order.
    pub shock_index: usize,
    /// Per-component state bounds.
    pub bounds: Vec<(f64, f64)>,
    /// Accumulated gauge relative to the frame the system was built in.
    pub gauge: GaugeParams,
    advection: Arc<dyn Advection>,
    offset: Vec<f64>,
    reference: DMatrix<f64>,
}

impl fmt::Debug for SystemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDefinition")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("shock_index", &self.shock_index)
            .field("bounds", &self.bounds)
            .field("gauge", &self.gauge)
            .finish()
    }
}

impl SystemDefinition {
    /// Wraps an advection evaluator; the eigenvector reference frame is taken at the box center.
    pub fn new(
        name: impl Into<String>,
        advection: Arc<dyn Advection>,
        shock_index: usize,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self, SystemError> {
        let n = advection.dim();
        if bounds.len() != n {
            return Err(SystemError::InvalidParameter(format!(
                "expected {n} bounds, got {}",
                bounds.len()
            )));
        }
        if shock_index >= n {
            return Err(SystemError::InvalidParameter(format!(
                "shock index {shock_index} out of range for dimension {n}"
            )));
        }
        let mut system = Self {
            name: name.into(),
            shock_index,
            bounds,
            gauge: GaugeParams::identity(),
            advection,
            offset: vec![0.0; n],
            reference: DMatrix::identity(n, n),
        };
        let center = system.center();
        system.reference = spectral::anchored_basis(&system, &center)?;
        Ok(system)
    }

    pub fn dim(&self) -> usize {
        self.advection.dim()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn contains(&self, state: &[f64]) -> bool {
        state.iter().zip(&self.bounds).all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    /// Distance from `state` to the box boundary (negative outside).
    pub fn interior_margin(&self, state: &[f64]) -> f64 {
        state
            .iter()
            .zip(&self.bounds)
            .map(|(x, (lo, hi))| (x - lo).min(hi - x))
            .fold(f64::INFINITY, f64::min)
    }

    fn model_state(&self, state: &[f64]) -> Vec<f64> {
        state.iter().zip(&self.offset).map(|(x, o)| x + o).collect()
    }

    /// The gauged advection matrix at `state`.
    pub fn matrix(&self, state: &[f64]) -> DMatrix<f64> {
        let mut a = self.advection.matrix(&self.model_state(state));
        for i in 0..self.dim() {
            a[(i, i)] -= self.gauge.v;
        }
        a
    }

    pub fn matrix_derivative(&self, state: &[f64], component: usize) -> Option<DMatrix<f64>> {
        self.advection.matrix_derivative(&self.model_state(state), component)
    }

    pub fn has_analytic_derivative(&self) -> bool {
        let center = self.center();
        self.matrix_derivative(&center, 0).is_some()
    }

    pub(crate) fn closed_form_eigensystem(&self, state: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        self.advection
            .eigensystem(&self.model_state(state))
            .map(|(values, vectors)| (values.into_iter().map(|l| l - self.gauge.v).collect(), vectors))
    }

    /// Eigenvector frame used to fix signs when no nearby basis is supplied.
    pub fn reference_basis(&self) -> &DMatrix<f64> {
        &self.reference
    }

    /// Same system in the gauge `g` applied after the current one: `A - v Id`.
    pub fn galilean_transform(&self, g: &GaugeParams) -> SystemDefinition {
        let mut out = self.clone();
        out.gauge = self.gauge.then(g);
        out
    }

    /// Same system in shifted state variables `psi_new = psi - shift`.
    pub fn translated(&self, shift: &[f64]) -> SystemDefinition {
        let mut out = self.clone();
        out.offset = self.offset.iter().zip(shift).map(|(o, s)| o + s).collect();
        out.bounds = self.bounds.iter().zip(shift).map(|((lo, hi), s)| (lo - s, hi - s)).collect();
        out
    }

    /// Uniform samples from the state box, reproducible from `seed`.
    pub fn sample_states(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        self.sample_states_shrunk(count, seed, 0.0)
    }

    /// Uniform samples from the box shrunk by `inset` on every side.
    pub fn sample_states_shrunk(&self, count: usize, seed: u64, inset: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                self.bounds
                    .iter()
                    .map(|(lo, hi)| rng.gen_range((lo + inset)..=(hi - inset)))
                    .collect()
            })
            .collect()
    }
}

/// `A = diag(v, -1)`: Burgers coupled to a decoupled unit-speed transport.
struct BurgersTransport;

impl Advection for BurgersTransport {
    fn dim(&self) -> usize {
        2
    }

    fn matrix(&self, state: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[state[0], 0.0, 0.0, -1.0])
    }

    fn matrix_derivative(&self, _state: &[f64], component: usize) -> Option<DMatrix<f64>> {
        let d = if component == 0 { 1.0 } else { 0.0 };
        Some(DMatrix::from_row_slice(2, 2, &[d, 0.0, 0.0, 0.0]))
    }

    fn eigensystem(&self, state: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        Some((vec![state[0], -1.0], DMatrix::identity(2, 2)))
    }
}

/// Isentropic p-system with `p(v) = v^(-gamma)`.
struct PSystem {
    gamma: f64,
}

impl PSystem {
    fn dp(&self, v: f64) -> f64 {
        -self.gamma * v.powf(-self.gamma - 1.0)
    }

    fn d2p(&self, v: f64) -> f64 {
        self.gamma * (self.gamma + 1.0) * v.powf(-self.gamma - 2.0)
    }
}

impl Advection for PSystem {
    fn dim(&self) -> usize {
        2
    }

    fn matrix(&self, state: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, self.dp(state[0]), 0.0])
    }

    fn matrix_derivative(&self, state: &[f64], component: usize) -> Option<DMatrix<f64>> {
        let d = if component == 0 { self.d2p(state[0]) } else { 0.0 };
        Some(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, d, 0.0]))
    }

    fn eigensystem(&self, state: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let c = (-self.dp(state[0])).sqrt();
        let norm = (1.0 + c * c).sqrt();
        let r = DMatrix::from_row_slice(2, 2, &[1.0 / norm, 1.0 / norm, c / norm, -c / norm]);
        Some((vec![-c, c], r))
    }
}

/// Three fields with eigenvalues `(-2 + e, psi_2, 2 + e)`, `e = k sin(psi_1 + psi_3)`;
/// the outer eigenvectors rotate in the 1-3 plane while the middle one stays `e_2`.
struct SyntheticThree {
    coupling: f64,
}

const OUTER_TILT: [f64; 2] = [0.2, -0.1];
const ANGLE_GRADIENT: [f64; 3] = [0.15, 0.25, 0.0];

impl SyntheticThree {
    fn angle(state: &[f64]) -> f64 {
        ANGLE_GRADIENT.iter().zip(state).map(|(g, x)| g * x).sum()
    }

    fn eigenvalues(&self, state: &[f64]) -> [f64; 3] {
        let e = self.coupling * (state[0] + state[2]).sin();
        [-2.0 + e, state[1], 2.0 + e]
    }

    fn eigenvalue_gradient(&self, state: &[f64], component: usize) -> [f64; 3] {
        if component == 1 {
            return [0.0, 1.0, 0.0];
        }
        let de = self.coupling * (state[0] + state[2]).cos();
        [de, 0.0, de]
    }

    /// Unnormalized outer vectors and their angle derivatives.
    fn raw_vectors(alpha: f64) -> ([DVector<f64>; 2], [DVector<f64>; 2]) {
        let (s, c) = alpha.sin_cos();
        let v1 = DVector::from_vec(vec![c, OUTER_TILT[0], s]);
        let v3 = DVector::from_vec(vec![-s, OUTER_TILT[1], c]);
        let dv1 = DVector::from_vec(vec![-s, 0.0, c]);
        let dv3 = DVector::from_vec(vec![-c, 0.0, -s]);
        ([v1, v3], [dv1, dv3])
    }

    fn basis(state: &[f64]) -> DMatrix<f64> {
        let ([v1, v3], _) = Self::raw_vectors(Self::angle(state));
        let mut r = DMatrix::zeros(3, 3);
        r.set_column(0, &v1.normalize());
        r[(1, 1)] = 1.0;
        r.set_column(2, &v3.normalize());
        r
    }

    fn basis_derivative(state: &[f64], component: usize) -> DMatrix<f64> {
        let ([v1, v3], [dv1, dv3]) = Self::raw_vectors(Self::angle(state));
        let da = ANGLE_GRADIENT[component];
        let unit_derivative = |v: &DVector<f64>, dv: &DVector<f64>| {
            let norm = v.norm();
            let r = v / norm;
            let dv = dv * da;
            (&dv - &r * r.dot(&dv)) / norm
        };
        let mut d = DMatrix::zeros(3, 3);
        d.set_column(0, &unit_derivative(&v1, &dv1));
        d.set_column(2, &unit_derivative(&v3, &dv3));
        d
    }
}

impl Advection for SyntheticThree {
    fn dim(&self) -> usize {
        3
    }

    fn matrix(&self, state: &[f64]) -> DMatrix<f64> {
        let r = Self::basis(state);
        let l = r.clone().try_inverse().expect("outer tilt keeps the basis invertible");
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&self.eigenvalues(state)));
        r * d * l
    }

    fn matrix_derivative(&self, state: &[f64], component: usize) -> Option<DMatrix<f64>> {
        let r = Self::basis(state);
        let l = r.clone().try_inverse()?;
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&self.eigenvalues(state)));
        let dd = DMatrix::from_diagonal(&DVector::from_row_slice(
            &self.eigenvalue_gradient(state, component),
        ));
        let dr = Self::basis_derivative(state, component);
        let dl = -&l * &dr * &l;
        Some(&dr * &d * &l + &r * dd * &l + &r * d * dl)
    }

    fn eigensystem(&self, state: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        Some((self.eigenvalues(state).to_vec(), Self::basis(state)))
    }
}

/// A scalar law `theta_t + speed(theta) theta_x = 0` augmented with a decoupled transport field.
struct ScalarAugmented {
    speed: Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
    transport_speed: f64,
}

impl Advection for ScalarAugmented {
    fn dim(&self) -> usize {
        2
    }

    fn matrix(&self, state: &[f64]) -> DMatrix<f64> {
        let (s, _) = (self.speed)(state[0]);
        DMatrix::from_row_slice(2, 2, &[s, 0.0, 0.0, self.transport_speed])
    }

    fn matrix_derivative(&self, state: &[f64], component: usize) -> Option<DMatrix<f64>> {
        let (_, ds) = (self.speed)(state[0]);
        let d = if component == 0 { ds } else { 0.0 };
        Some(DMatrix::from_row_slice(2, 2, &[d, 0.0, 0.0, 0.0]))
    }

    fn eigensystem(&self, state: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let (s, _) = (self.speed)(state[0]);
        Some((vec![s, self.transport_speed], DMatrix::identity(2, 2)))
    }
}

/// Constant-coefficient or user-supplied matrix field without closed forms.
pub struct MatrixField<F> {
    dim: usize,
    eval: F,
}

impl<F> MatrixField<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(dim: usize, eval: F) -> Self {
        Self { dim, eval }
    }
}

impl<F> Advection for MatrixField<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn matrix(&self, state: &[f64]) -> DMatrix<f64> {
        (self.eval)(state)
    }
}

/// Genuine-nonlinearity threshold enforced when builtin systems are constructed.
pub const BUILTIN_GNL_THRESHOLD: f64 = 1e-3;

/// Instantiates `burgers_transport`, `p_system` or `synthetic3_intermediate`.
pub fn builtin_system(name: &str, params: &SystemParams) -> Result<SystemDefinition, SystemError> {
    let system = match name {
        "burgers_transport" => SystemDefinition::new(
            name,
            Arc::new(BurgersTransport),
            1,
            vec![(0.0, 4.0), (-5.0, 5.0)],
        )?,
        "p_system" => {
            if params.gamma <= 0.0 {
                return Err(SystemError::InvalidParameter("gamma must be positive".into()));
            }
            if params.p_field > 1 {
                return Err(SystemError::InvalidParameter("p_field must be 0 or 1".into()));
            }
            SystemDefinition::new(
                name,
                Arc::new(PSystem { gamma: params.gamma }),
                params.p_field,
                vec![(0.5, 4.0), (-5.0, 5.0)],
            )?
        }
        "synthetic3_intermediate" => {
            if params.coupling.abs() >= 0.5 {
                return Err(SystemError::InvalidParameter("coupling must be below 0.5".into()));
            }
            SystemDefinition::new(
                name,
                Arc::new(SyntheticThree { coupling: params.coupling }),
                1,
                vec![(-1.5, 1.5), (-1.5, 1.5), (-1.5, 1.5)],
            )?
        }
        other => return Err(SystemError::UnknownSystem(other.to_string())),
    };
    let samples = system.sample_states(100, 0x5eed);
    spectral::check_genuine_nonlinearity(
        &system,
        &samples,
        BUILTIN_GNL_THRESHOLD,
        &spectral::SpectralConfig::default(),
    )?;
    Ok(system)
}

/// Augments a scalar law with a transport field slower than every sampled speed by at least one.
pub fn augment_scalar(
    name: impl Into<String>,
    speed: Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
    bounds: (f64, f64),
) -> Result<SystemDefinition, SystemError> {
    let samples = 257;
    let min_speed = (0..samples)
        .map(|k| bounds.0 + (bounds.1 - bounds.0) * k as f64 / (samples - 1) as f64)
        .map(|theta| speed(theta).0)
        .fold(f64::INFINITY, f64::min);
    let transport_speed = (min_speed - 1.0).floor() - 1.0;
    SystemDefinition::new(
        name,
        Arc::new(ScalarAugmented { speed, transport_speed }),
        1,
        vec![bounds, (-5.0, 5.0)],
    )
}

/// Sufficient check of the graphical condition: a constant speed separates the outer fields.
pub fn graphical_condition_check(wave: &SimpleWave) -> bool {
    let system = wave.system();
    let n = system.dim();
    let mut sup_slowest = f64::NEG_INFINITY;
    let mut inf_fastest = f64::INFINITY;
    for state in wave.curve().states() {
        let Ok(data) = spectral::eigendecompose(system, state, &spectral::SpectralConfig::default())
        else {
            return false;
        };
        sup_slowest = sup_slowest.max(data.eigenvalues[0]);
        inf_fastest = inf_fastest.min(data.eigenvalues[n - 1]);
    }
    sup_slowest < inf_fastest
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{eigendecompose, SpectralConfig};

    #[test]
    fn burgers_transport_spectrum() {
        let sys = builtin_system("burgers_transport", &SystemParams::default()).unwrap();
        let data = eigendecompose(&sys, &[0.5, 0.0], &SpectralConfig::default()).unwrap();
        assert_eq!(data.eigenvalues, vec![-1.0, 0.5]);
        assert_eq!(sys.shock_index, 1);
    }

    #[test]
    fn synthetic_spectrum_at_origin() {
        let params = SystemParams { coupling: 0.0, ..SystemParams::default() };
        let sys = builtin_system("synthetic3_intermediate", &params).unwrap();
        let data = eigendecompose(&sys, &[0.0, 0.0, 0.0], &SpectralConfig::default()).unwrap();
        for (got, want) in data.eigenvalues.iter().zip([-2.0, 0.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn p_system_speeds() {
        let sys = builtin_system("p_system", &SystemParams::default()).unwrap();
        let data = eigendecompose(&sys, &[2.0, 0.0], &SpectralConfig::default()).unwrap();
        assert!((data.eigenvalues[0] + 0.5).abs() < 1e-14);
        assert!((data.eigenvalues[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn unknown_name_is_rejected() {
        let err = builtin_system("euler", &SystemParams::default()).unwrap_err();
        assert!(matches!(err, SystemError::UnknownSystem(_)));
    }

    #[test]
    fn shear_shifts_eigenvalues() {
        let sys = builtin_system("burgers_transport", &SystemParams::default()).unwrap();
        let sheared = sys.galilean_transform(&GaugeParams { t0: 0.0, x0: 0.0, v: 3.0 });
        let data = eigendecompose(&sheared, &[0.5, 0.0], &SpectralConfig::default()).unwrap();
        assert_eq!(data.eigenvalues, vec![-4.0, -2.5]);
    }

    #[test]
    fn identity_gauge_changes_nothing() {
        let sys = builtin_system("p_system", &SystemParams::default()).unwrap();
        let same = sys.galilean_transform(&GaugeParams::identity());
        for state in sys.sample_states(10, 3) {
            let a = eigendecompose(&sys, &state, &SpectralConfig::default()).unwrap();
            let b = eigendecompose(&same, &state, &SpectralConfig::default()).unwrap();
            assert_eq!(a.eigenvalues, b.eigenvalues);
        }
    }

    #[test]
    fn gauge_composition_matches_sequential_application() {
        let a = GaugeParams { t0: 0.3, x0: -1.2, v: 0.7 };
        let b = GaugeParams { t0: -0.5, x0: 0.4, v: -2.0 };
        let (t, x) = (1.7, 0.9);
        let (t1, x1) = a.apply(t, x);
        let (t2, x2) = b.apply(t1, x1);
        let (t3, x3) = a.then(&b).apply(t, x);
        assert!((t2 - t3).abs() < 1e-14 && (x2 - x3).abs() < 1e-14);
        let (tb, xb) = a.invert(t1, x1);
        assert!((tb - t).abs() < 1e-14 && (xb - x).abs() < 1e-14);
    }

    #[test]
    fn augmented_scalar_has_slower_transport() {
        let sys = augment_scalar("burgers", Arc::new(|th: f64| (th, 1.0)), (-0.5, 2.0)).unwrap();
        let data = eigendecompose(&sys, &[-0.5, 0.0], &SpectralConfig::default()).unwrap();
        assert!(data.eigenvalues[0] <= -0.5 - 1.0);
        assert_eq!(sys.shock_index, 1);
    }
}
