//! Small dense helpers shared by the estimators and the tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gram matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Condition number of a symmetric matrix; infinite unless positive definite.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let lo = eig.min();
    let hi = eig.max();
    if lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a symmetric positive-definite matrix, refusing ill-conditioned input.
pub fn spd_inverse(m: &DMatrix<f64>, context: impl FnOnce() -> String) -> Result<DMatrix<f64>> {
    let condition = spd_condition(m);
    if condition > MAX_CONDITION {
        return Err(Error::SingularGram {
            context: context(),
            condition,
        });
    }
    let chol = symmetrize(m).cholesky().ok_or_else(|| Error::SingularGram {
        context: "cholesky factorization failed".into(),
        condition,
    })?;
    Ok(symmetrize(&chol.inverse()))
}

/// Symmetric square root of a positive semi-definite matrix; negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `v' M v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}
