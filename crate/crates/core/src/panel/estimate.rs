//! Unit-by-unit least squares and GMM estimators.
//!
//! Every estimator here yields a coefficient vector `beta` together with the
//! Gram matrix `Q` that defines both the k-means metric and the group-level
//! aggregation weights: `X'X` after within-demeaning for least squares and
//! `X'Z W Z'X` after first-differencing for GMM.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::PanelDataset;
use super::transform::{first_difference, within_demean, DemeanedPanel, DifferencedPanel, UnitBlock};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetrize};

/// First-step GMM weighting matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmWeight {
    /// `(Z'Z / T)^{-1}`, the 2SLS weight.
    #[default]
    TwoStage,
    Identity,
}

/// Estimation route for the initial unit-level coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ls,
    Gmm(GmmWeight),
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ls => "ls",
            Estimator::Gmm(_) => "gmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualFit {
    pub unit: String,
    pub beta: DVector<f64>,
    /// Symmetric positive-definite weighting Gram matrix.
    pub gram: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// Covariance of the unit score `Q beta` per unit of error variance.
    pub meat: DMatrix<f64>,
    /// Error variance estimated from the unit's own residuals.
    pub sigma2: f64,
}

/// JSON form of a fit: `{unit, beta, gram}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub unit: String,
    pub beta: Vec<f64>,
    pub gram: Vec<Vec<f64>>,
}

impl From<&IndividualFit> for FitRecord {
    fn from(f: &IndividualFit) -> Self {
        FitRecord {
            unit: f.unit.clone(),
            beta: f.beta.iter().copied().collect(),
            gram: f.gram.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

fn unit_label(units: &[String], unit: usize) -> Result<&str> {
    units
        .get(unit)
        .map(String::as_str)
        .ok_or_else(|| Error::InvalidArgument(format!("unit index {unit} out of range")))
}

fn ols_block(id: &str, block: &UnitBlock) -> Result<IndividualFit> {
    let gram = symmetrize(&(block.x.transpose() * &block.x));
    let inv = spd_inverse(&gram, || format!("X'X of unit {id}"))?;
    let beta = &inv * (block.x.transpose() * &block.y);
    let residuals = &block.y - &block.x * &beta;
    // demeaning costs one degree of freedom
    let dof = block.y.len().saturating_sub(block.x.ncols() + 1).max(1) as f64;
    let sigma2 = residuals.norm_squared() / dof;
    Ok(IndividualFit {
        unit: id.to_string(),
        beta,
        meat: gram.clone(),
        gram,
        residuals,
        sigma2,
    })
}

pub fn ols_individual(demeaned: &DemeanedPanel, unit: usize) -> Result<IndividualFit> {
    let id = unit_label(&demeaned.units, unit)?;
    ols_block(id, &demeaned.blocks[unit])
}

fn gmm_block(id: &str, block: &UnitBlock, weight: GmmWeight) -> Result<IndividualFit> {
    let z = block.z.as_ref().ok_or(Error::MissingInstruments)?;
    let rank_deficient = || Error::RankDeficientInstruments { unit: id.to_string() };
    // q x p cross-moment
    let zx = z.transpose() * &block.x;
    let sv = zx.singular_values();
    if sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE) {
        return Err(rank_deficient());
    }
    let omega = match weight {
        GmmWeight::Identity => DMatrix::identity(z.ncols(), z.ncols()),
        GmmWeight::TwoStage => {
            let zz = z.transpose() * z / block.y.len() as f64;
            spd_inverse(&zz, || format!("Z'Z of unit {id}")).map_err(|_| rank_deficient())?
        }
    };
    let gram = symmetrize(&(zx.transpose() * &omega * &zx));
    let rhs = zx.transpose() * &omega * (z.transpose() * &block.y);
    let inv = spd_inverse(&gram, || format!("GMM Gram of unit {id}"))?;
    let beta = &inv * rhs;
    let residuals = &block.y - &block.x * &beta;
    let (meat, sigma2) = differenced_meat(z, &zx, &omega, &residuals);
    Ok(IndividualFit {
        unit: id.to_string(),
        beta,
        gram,
        residuals,
        meat,
        sigma2,
    })
}

/// Score covariance shape when the differenced errors are MA(1) with
/// `Var = s2 * tridiag(-1, 2, -1)`, and `s2` read off the residuals.
fn differenced_meat(
    z: &DMatrix<f64>,
    zx: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    residuals: &DVector<f64>,
) -> (DMatrix<f64>, f64) {
    let t = residuals.len();
    let p = zx.ncols();
    let s2 = residuals.norm_squared() / (2.0 * t.saturating_sub(p).max(1) as f64);
    let mut zsz = z.transpose() * z * 2.0;
    for r in 0..t.saturating_sub(1) {
        let a = z.row(r).transpose();
        let b = z.row(r + 1).transpose();
        zsz -= &a * b.transpose() + &b * a.transpose();
    }
    let lever = omega * zx;
    (symmetrize(&(lever.transpose() * zsz * lever)), s2)
}

pub fn gmm_individual(diffed: &DifferencedPanel, unit: usize, weight: GmmWeight) -> Result<IndividualFit> {
    let id = unit_label(&diffed.units, unit)?;
    gmm_block(id, &diffed.blocks[unit], weight)
}

/// Fits every unit; units are processed in parallel, output order follows
/// the panel.
pub fn fit_individuals(data: &PanelDataset, estimator: Estimator) -> Result<Vec<IndividualFit>> {
    match estimator {
        Estimator::Ls => {
            let d = within_demean(data);
            (0..d.blocks.len()).into_par_iter().map(|i| ols_individual(&d, i)).collect()
        }
        Estimator::Gmm(weight) => {
            if !data.has_instruments() {
                return Err(Error::MissingInstruments);
            }
            let d = first_difference(data);
            (0..d.blocks.len())
                .into_par_iter()
                .map(|i| gmm_individual(&d, i, weight))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::dataset::UnitSeries;
    use rand::{Rng, SeedableRng};

    fn block(y: &[f64], x: &[f64], p: usize) -> UnitBlock {
        let t = y.len();
        UnitBlock {
            y: DVector::from_column_slice(y),
            x: DMatrix::from_row_slice(t, p, x),
            z: None,
        }
    }

    #[test]
    fn perfect_fit() {
        let b = block(&[-1.0, 0.5, 0.5], &[-1.0, 0.5, 0.5], 1);
        let f = ols_block("a", &b).unwrap();
        assert!((f.beta[0] - 1.0).abs() < 1e-14);
        assert!(f.residuals.amax() < 1e-14);
    }

    #[test]
    fn two_point_slope() {
        let f = ols_block("a", &block(&[-1.0, 1.0], &[-0.5, 0.5], 1)).unwrap();
        assert!((f.beta[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn residuals_are_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = block(&y, &x, 3);
        let f = ols_block("a", &b).unwrap();
        let xty = b.x.transpose() * &b.y;
        assert!((b.x.transpose() * &f.residuals).norm() <= 1e-8 * xty.norm());
    }

    #[test]
    fn collinear_regressors_are_singular() {
        let b = block(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0], 2);
        assert!(matches!(ols_block("a", &b), Err(Error::SingularGram { .. })));
    }

    fn random_iv_block(rng: &mut impl Rng, t: usize, p: usize, q: usize) -> UnitBlock {
        let z = DMatrix::from_fn(t, q, |_, _| rng.random_range(-1.0..1.0));
        let x = &z.columns(0, p) * 0.8 + DMatrix::from_fn(t, p, |_, _| rng.random_range(-0.3..0.3));
        let y = DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0));
        UnitBlock { y, x, z: Some(z) }
    }

    #[test]
    fn gmm_with_regressors_as_instruments_is_ols() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut b = random_iv_block(&mut rng, 12, 2, 2);
        b.z = Some(b.x.clone());
        let g = gmm_block("a", &b, GmmWeight::Identity).unwrap();
        let o = ols_block("a", &b).unwrap();
        assert!((&g.beta - &o.beta).amax() < 1e-10);
    }

    #[test]
    fn just_identified_iv_ignores_weight() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let b = random_iv_block(&mut rng, 15, 2, 2);
        let z = b.z.as_ref().unwrap();
        let direct = (z.transpose() * &b.x).try_inverse().unwrap() * (z.transpose() * &b.y);
        for w in [GmmWeight::Identity, GmmWeight::TwoStage] {
            let g = gmm_block("a", &b, w).unwrap();
            assert!((&g.beta - &direct).amax() < 1e-9);
        }
    }

    #[test]
    fn missing_or_rank_deficient_instruments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let b = block(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.5], 1);
        assert!(matches!(gmm_block("a", &b, GmmWeight::TwoStage), Err(Error::MissingInstruments)));
        let mut b = random_iv_block(&mut rng, 10, 2, 3);
        let z = b.z.as_mut().unwrap();
        z.column_mut(0).fill(0.0);
        z.column_mut(1).fill(0.0);
        assert!(matches!(
            gmm_block("a", &b, GmmWeight::Identity),
            Err(Error::RankDeficientInstruments { .. })
        ));
    }

    #[test]
    fn panel_fit_keeps_unit_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let series: Vec<UnitSeries> = (0..7)
            .map(|_| UnitSeries {
                y: DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
                x: DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0)),
                z: None,
            })
            .collect();
        let data = PanelDataset::new(
            (0..7).map(|i| format!("u{i}")).collect(),
            (0..6).collect(),
            vec!["x1".into(), "x2".into()],
            vec![],
            series,
        )
        .unwrap();
        let fits = fit_individuals(&data, Estimator::Ls).unwrap();
        let d = within_demean(&data);
        for (i, f) in fits.iter().enumerate() {
            assert_eq!(f.unit, format!("u{i}"));
            assert_eq!(*f, ols_individual(&d, i).unwrap());
        }
    }
}
