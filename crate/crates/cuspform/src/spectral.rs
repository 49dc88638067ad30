//! Eigenstructure of `A(psi)` and the derived structure tensors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::systems::SystemDefinition;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpectralError {
    #[error("hyperbolicity lost: {0}")]
    HyperbolicityLoss(String),
    #[error("genuine nonlinearity bound {c_lower:.3e} below required {c_min:.3e} for field {index}")]
    GenuineNonlinearityFailure { c_lower: f64, c_min: f64, index: usize },
}

/// Tolerances and differencing step for the spectral computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub hyperbolicity_gap: f64,
    pub spectral_tol: f64,
    pub xi_tol: f64,
    pub fd_step: f64,
    /// Differentiate eigenvectors numerically even when `dA/dpsi` is available.
    pub force_finite_differences: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            hyperbolicity_gap: 1e-6,
            spectral_tol: 1e-10,
            xi_tol: 1e-8,
            fd_step: 1e-5,
            force_finite_differences: false,
        }
    }
}

/// Sorted eigenvalues with unit right eigenvectors (columns of `right`) and their dual rows.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub right: DMatrix<f64>,
    pub left: DMatrix<f64>,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn right_vector(&self, i: usize) -> DVector<f64> {
        self.right.column(i).into_owned()
    }

    /// Components `l^J . v` of a vector in the eigenbasis.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|j| (0..n).map(|s| self.left[(j, s)] * v[s]).sum()).collect()
    }

    /// `max |L R - Id|`.
    pub fn duality_defect(&self) -> f64 {
        let n = self.dim();
        let prod = &self.left * &self.right;
        (prod - DMatrix::identity(n, n)).amax()
    }

    /// `max_I |A r_I - lambda_I r_I|`.
    pub fn eigen_residual(&self, a: &DMatrix<f64>) -> f64 {
        (0..self.dim())
            .map(|i| {
                let r = self.right.column(i);
                (a * r - r * self.eigenvalues[i]).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Eigen-derivatives and the interaction tensor at one state.
#[derive(Debug, Clone)]
pub struct StructureTensors {
    pub spectral: SpectralData,
    /// `grad[(I, S)] = d lambda_I / d psi^S`.
    pub eigenvalue_gradient: DMatrix<f64>,
    /// `l^J dr_I/dpsi^S`, flat in `[J][I][S]` order.
    frame_derivative: Vec<f64>,
    /// Interaction coefficients, flat in `[I][J][K]` order.
    interaction: Vec<f64>,
}

impl StructureTensors {
    pub fn dim(&self) -> usize {
        self.spectral.dim()
    }

    /// Coefficient of `r_J` in `dr_I/dpsi^S`.
    #[inline]
    pub fn frame_derivative(&self, j: usize, i: usize, s: usize) -> f64 {
        let n = self.dim();
        self.frame_derivative[(j * n + i) * n + s]
    }

    /// Interaction tensor `xi^I_{JK}`.
    #[inline]
    pub fn xi(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.dim();
        self.interaction[(i * n + j) * n + k]
    }

    /// Growth rate `d lambda_I / d r_J = Lambda_(I) . r_J`.
    pub fn growth(&self, i: usize, j: usize) -> f64 {
        let n = self.dim();
        (0..n).map(|s| self.eigenvalue_gradient[(i, s)] * self.spectral.right[(s, j)]).sum()
    }

    /// `max_{I != J} |xi^I_{JJ}|`.
    pub fn structural_zero_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max(self.xi(i, j, j).abs());
                }
            }
        }
        worst
    }

    /// `max_I |xi^I_{II} + Lambda_(I) . r_I|`.
    pub fn diagonal_defect(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.xi(i, i, i) + self.growth(i, i)).abs())
            .fold(0.0, f64::max)
    }
}

/// Certificate that `|xi^I_{II}|` stays above a bound on a state sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityCertificate {
    pub c_lower: f64,
    pub index: usize,
}

fn first_nonzero_sign(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for x in v {
        if x.abs() > 1e-12 * scale.max(1e-300) {
            return x.signum();
        }
    }
    1.0
}

/// Eigenvalues in increasing order with unit eigenvectors in arbitrary sign.
fn raw_eigensystem(
    system: &SystemDefinition,
    state: &[f64],
    config: &SpectralConfig,
) -> Result<(Vec<f64>, DMatrix<f64>), SpectralError> {
    let n = system.dim();
    let (mut values, mut vectors) = match system.closed_form_eigensystem(state) {
        Some(pair) => pair,
        None => numeric_eigensystem(&system.matrix(state), config)?,
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::HyperbolicityLoss("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let mut sorted_vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = vectors.column(src).normalize();
        sorted_vectors.set_column(dst, &col);
    }
    values = sorted_values;
    vectors = sorted_vectors;
    for w in values.windows(2) {
        if w[1] - w[0] < config.hyperbolicity_gap {
            return Err(SpectralError::HyperbolicityLoss(format!(
                "eigenvalue gap {:.3e} below {:.1e} at {state:?}",
                w[1] - w[0],
                config.hyperbolicity_gap
            )));
        }
    }
    Ok((values, vectors))
}

fn numeric_eigensystem(
    a: &DMatrix<f64>,
    config: &SpectralConfig,
) -> Result<(Vec<f64>, DMatrix<f64>), SpectralError> {
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    let complex = a.clone().complex_eigenvalues();
    let mut values = Vec::with_capacity(n);
    for z in complex.iter() {
        if z.im.abs() > 1e3 * f64::EPSILON * scale {
            return Err(SpectralError::HyperbolicityLoss(format!(
                "complex eigenvalue {:.6e}{:+.6e}i",
                z.re, z.im
            )));
        }
        values.push(z.re);
    }
    values.sort_by(|x, y| x.total_cmp(y));
    for w in values.windows(2) {
        if w[1] - w[0] < config.hyperbolicity_gap {
            return Err(SpectralError::HyperbolicityLoss(format!(
                "eigenvalue gap {:.3e}",
                w[1] - w[0]
            )));
        }
    }
    let mut vectors = DMatrix::zeros(n, n);
    for (i, &lambda) in values.iter().enumerate() {
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| SpectralError::HyperbolicityLoss("singular value decomposition failed".into()))?;
        let k = (0..n)
            .min_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]))
            .unwrap_or(0);
        let v = v_t.row(k).transpose();
        vectors.set_column(i, &v);
    }
    Ok((values, vectors))
}

fn orient(vectors: &mut DMatrix<f64>, guide: &DMatrix<f64>) {
    for i in 0..vectors.ncols() {
        let dot = vectors.column(i).dot(&guide.column(i));
        if dot < 0.0 {
            let flipped = -vectors.column(i);
            vectors.set_column(i, &flipped);
        }
    }
}

fn finish(values: Vec<f64>, right: DMatrix<f64>) -> Result<SpectralData, SpectralError> {
    let left = right
        .clone()
        .try_inverse()
        .ok_or_else(|| SpectralError::HyperbolicityLoss("eigenvector matrix is singular".into()))?;
    Ok(SpectralData { eigenvalues: values, right, left })
}

/// Eigenvector frame at `state` with the first nonzero component of each vector positive.
pub(crate) fn anchored_basis(
    system: &SystemDefinition,
    state: &[f64],
) -> Result<DMatrix<f64>, SpectralError> {
    let (_, mut vectors) = raw_eigensystem(system, state, &SpectralConfig::default())?;
    for i in 0..vectors.ncols() {
        let col: Vec<f64> = vectors.column(i).iter().copied().collect();
        if first_nonzero_sign(&col) < 0.0 {
            let flipped = -vectors.column(i);
            vectors.set_column(i, &flipped);
        }
    }
    Ok(vectors)
}

/// Eigendecomposition with signs aligned to the system's reference frame.
pub fn eigendecompose(
    system: &SystemDefinition,
    state: &[f64],
    config: &SpectralConfig,
) -> Result<SpectralData, SpectralError> {
    let (values, mut right) = raw_eigensystem(system, state, config)?;
    orient(&mut right, system.reference_basis());
    finish(values, right)
}

/// Eigendecomposition with signs continued from a nearby basis.
pub fn eigendecompose_near(
    system: &SystemDefinition,
    state: &[f64],
    previous: &SpectralData,
    config: &SpectralConfig,
) -> Result<SpectralData, SpectralError> {
    let (values, mut right) = raw_eigensystem(system, state, config)?;
    orient(&mut right, &previous.right);
    finish(values, right)
}

/// `(d lambda_I/d psi^S, l^J dr_I/d psi^S)` at `state`, with `spectral` already computed there.
fn eigen_derivatives_from(
    system: &SystemDefinition,
    state: &[f64],
    spectral: &SpectralData,
    config: &SpectralConfig,
) -> Result<(DMatrix<f64>, Vec<f64>), SpectralError> {
    let n = system.dim();
    let mut grad = DMatrix::zeros(n, n);
    let mut frame = vec![0.0; n * n * n];
    let analytic = !config.force_finite_differences && system.has_analytic_derivative();
    for s in 0..n {
        if analytic {
            let da = system
                .matrix_derivative(state, s)
                .expect("analytic derivative advertised by the system");
            let coupled = &spectral.left * da * &spectral.right;
            for i in 0..n {
                grad[(i, s)] = coupled[(i, i)];
                let mut own = 0.0;
                for j in 0..n {
                    if j != i {
                        let c = coupled[(j, i)] / (spectral.eigenvalues[i] - spectral.eigenvalues[j]);
                        frame[(j * n + i) * n + s] = c;
                        own -= c * spectral.right.column(i).dot(&spectral.right.column(j));
                    }
                }
                frame[(i * n + i) * n + s] = own;
            }
        } else {
            let h = config.fd_step;
            let mut plus = state.to_vec();
            let mut minus = state.to_vec();
            plus[s] += h;
            minus[s] -= h;
            let up = eigendecompose_near(system, &plus, spectral, config)?;
            let down = eigendecompose_near(system, &minus, spectral, config)?;
            for i in 0..n {
                grad[(i, s)] = (up.eigenvalues[i] - down.eigenvalues[i]) / (2.0 * h);
                let dr = (up.right.column(i) - down.right.column(i)) / (2.0 * h);
                for j in 0..n {
                    frame[(j * n + i) * n + s] = spectral.left.row(j).transpose().dot(&dr);
                }
            }
        }
    }
    Ok((grad, frame))
}

/// Eigenvalue gradients and eigenvector-derivative coefficients at `state`.
pub fn eigen_derivatives(
    system: &SystemDefinition,
    state: &[f64],
    config: &SpectralConfig,
) -> Result<(DMatrix<f64>, Vec<f64>), SpectralError> {
    let spectral = eigendecompose(system, state, config)?;
    eigen_derivatives_from(system, state, &spectral, config)
}

/// Assembles the structure tensors around an existing decomposition.
pub fn structure_from(
    system: &SystemDefinition,
    state: &[f64],
    spectral: SpectralData,
    config: &SpectralConfig,
) -> Result<StructureTensors, SpectralError> {
    let n = system.dim();
    let (grad, frame) = eigen_derivatives_from(system, state, &spectral, config)?;
    let mut interaction = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut transport = 0.0;
                for s in 0..n {
                    transport += frame[(i * n + j) * n + s] * spectral.right[(s, k)];
                }
                let mut value = (spectral.eigenvalues[k] - spectral.eigenvalues[j]) * transport;
                if i == k {
                    let growth: f64 = (0..n).map(|s| grad[(i, s)] * spectral.right[(s, j)]).sum();
                    value -= growth;
                }
                interaction[(i * n + j) * n + k] = value;
            }
        }
    }
    Ok(StructureTensors {
        spectral,
        eigenvalue_gradient: grad,
        frame_derivative: frame,
        interaction,
    })
}

/// Structure tensors at `state` in the system's reference frame.
pub fn compute_xi(
    system: &SystemDefinition,
    state: &[f64],
    config: &SpectralConfig,
) -> Result<StructureTensors, SpectralError> {
    let spectral = eigendecompose(system, state, config)?;
    structure_from(system, state, spectral, config)
}

/// `min |xi^{I0}_{I0 I0}|` over `states`; fails below `c_min`.
pub fn check_genuine_nonlinearity(
    system: &SystemDefinition,
    states: &[Vec<f64>],
    c_min: f64,
    config: &SpectralConfig,
) -> Result<NonlinearityCertificate, SpectralError> {
    let index = system.shock_index;
    let mut c_lower = f64::INFINITY;
    for state in states {
        let tensors = compute_xi(system, state, config)?;
        c_lower = c_lower.min(tensors.xi(index, index, index).abs());
    }
    if states.is_empty() || c_lower < c_min {
        let c_lower = if states.is_empty() { 0.0 } else { c_lower };
        return Err(SpectralError::GenuineNonlinearityFailure { c_lower, c_min, index });
    }
    Ok(NonlinearityCertificate { c_lower, index })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::systems::{builtin_system, MatrixField, SystemParams};

    fn constant_system(entries: &[f64], n: usize) -> SystemDefinition {
        let m = DMatrix::from_row_slice(n, n, entries);
        SystemDefinition::new(
            "constant",
            Arc::new(MatrixField::new(n, move |_s: &[f64]| m.clone())),
            0,
            vec![(-1.0, 1.0); n],
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_hand_eigensolve() {
        let sys = constant_system(&[0.0, 1.0, 4.0, 0.0], 2);
        let data = eigendecompose(&sys, &[0.0, 0.0], &SpectralConfig::default()).unwrap();
        assert!((data.eigenvalues[0] + 2.0).abs() < 1e-12);
        assert!((data.eigenvalues[1] - 2.0).abs() < 1e-12);
        let s5 = 5f64.sqrt();
        let r1 = [1.0 / s5, -2.0 / s5];
        let r2 = [1.0 / s5, 2.0 / s5];
        for k in 0..2 {
            assert!((data.right[(k, 0)] - r1[k]).abs() < 1e-12);
            assert!((data.right[(k, 1)] - r2[k]).abs() < 1e-12);
        }
        assert!(data.duality_defect() < 1e-12);
    }

    #[test]
    fn diagonal_three_by_three_is_identity_frame() {
        let sys = constant_system(&[-0.3, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 1.9], 3);
        let data = eigendecompose(&sys, &[0.0; 3], &SpectralConfig::default()).unwrap();
        assert_eq!(data.eigenvalues, vec![-0.3, 0.7, 1.9]);
        assert!((data.right.clone() - DMatrix::identity(3, 3)).amax() < 1e-14);
        assert!((data.left.clone() - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn complex_pair_is_hyperbolicity_loss() {
        let sys_err = SystemDefinition::new(
            "rotation",
            Arc::new(MatrixField::new(2, |_s: &[f64]| {
                DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
            })),
            0,
            vec![(-1.0, 1.0); 2],
        );
        assert!(matches!(sys_err, Err(crate::systems::SystemError::Certificate(SpectralError::HyperbolicityLoss(_)))));
    }

    #[test]
    fn burgers_field_derivatives() {
        let sys = builtin_system("burgers_transport", &SystemParams::default()).unwrap();
        let t = compute_xi(&sys, &[1.3, 0.2], &SpectralConfig::default()).unwrap();
        assert_eq!(t.eigenvalue_gradient[(1, 0)], 1.0);
        assert_eq!(t.eigenvalue_gradient[(1, 1)], 0.0);
        assert_eq!(t.xi(1, 1, 1), -1.0);
        for j in 0..2 {
            for i in 0..2 {
                for s in 0..2 {
                    assert_eq!(t.frame_derivative(j, i, s), 0.0);
                }
            }
        }
    }

    #[test]
    fn constant_matrix_has_vanishing_tensors() {
        let sys = constant_system(&[0.0, 1.0, 4.0, 0.0], 2);
        let t = compute_xi(&sys, &[0.1, 0.1], &SpectralConfig::default()).unwrap();
        assert!(t.eigenvalue_gradient.amax() < 1e-9);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!(t.xi(i, j, k).abs() < 1e-9);
                }
            }
        }
        let err = check_genuine_nonlinearity(&sys, &[vec![0.0, 0.0]], 1e-3, &SpectralConfig::default())
            .unwrap_err();
        match err {
            SpectralError::GenuineNonlinearityFailure { c_lower, .. } => assert!(c_lower < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn p_system_gradient_matches_closed_form() {
        let sys = builtin_system("p_system", &SystemParams::default()).unwrap();
        let cfg = SpectralConfig { force_finite_differences: true, ..SpectralConfig::default() };
        for v in [0.8, 1.5, 2.5] {
            let (grad, _) = eigen_derivatives(&sys, &[v, 0.3], &cfg).unwrap();
            assert!((grad[(0, 0)] - 1.0 / (v * v)).abs() < 1e-6);
            assert!((grad[(1, 0)] + 1.0 / (v * v)).abs() < 1e-6);
        }
    }

    #[test]
    fn burgers_certificate_is_one() {
        let sys = builtin_system("burgers_transport", &SystemParams::default()).unwrap();
        let cert =
            check_genuine_nonlinearity(&sys, &sys.sample_states(20, 1), 0.5, &SpectralConfig::default())
                .unwrap();
        assert_eq!(cert.c_lower, 1.0);
        assert_eq!(cert.index, 1);
    }

    #[test]
    fn p_system_certificate_positive_on_unit_interval() {
        let sys = builtin_system("p_system", &SystemParams::default()).unwrap();
        let states: Vec<Vec<f64>> = (0..=20).map(|k| vec![1.0 + k as f64 / 20.0, 0.0]).collect();
        let cert = check_genuine_nonlinearity(&sys, &states, 1e-3, &SpectralConfig::default()).unwrap();
        // |d lambda/d r| = v^-2 / sqrt(1 + v^-2), smallest at v = 2.
        let expected = 0.25 / (1.0f64 + 0.25).sqrt();
        assert!((cert.c_lower - expected).abs() < 1e-12);
    }
}
