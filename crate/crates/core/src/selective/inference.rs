//! Selective and naive tests for a difference between two estimated groups.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::contrast::{build_contrast, Contrast, Target};
use super::truncation::truncation_set;
use crate::dist::{truncated_survival, BaseLaw, TruncatedLaw, WeightedChiSq};
use crate::error::{Error, Result};
use crate::interval::IntervalUnion;
use crate::kmeans::ClusterRun;
use crate::linalg::{psd_sqrt, spd_inverse, symmetrize};
use crate::panel::GroupEstimates;

/// Eigenvalues below this fraction of the largest are dropped.
pub const EIGEN_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ls,
    Gmm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::Gmm => "gmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveTestResult {
    pub method: Method,
    pub target: Target,
    pub pair: (usize, usize),
    pub statistic: f64,
    pub reference: BaseLaw,
    pub truncation: IntervalUnion,
    pub p_selective: f64,
    pub p_naive: f64,
    pub wald_stat: f64,
    pub log_support_mass: f64,
    /// Some tail probability came from the Monte Carlo fallback.
    pub fallback: bool,
}

impl SelectiveTestResult {
    pub fn lambdas(&self) -> Option<&[f64]> {
        match &self.reference {
            BaseLaw::SqrtWchisq(law) => Some(law.lambdas()),
            BaseLaw::FoldedNormal { .. } => None,
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match self.reference {
            BaseLaw::FoldedNormal { variance } => Some(variance),
            BaseLaw::SqrtWchisq(_) => None,
        }
    }
}

/// JSON form; groups and covariates are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectiveTestRecord {
    pub pair: (usize, usize),
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    pub truncation: IntervalUnion,
    pub p_selective: f64,
    pub p_naive: f64,
    pub wald_stat: f64,
    pub metadata: TestMetadata,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestMetadata {
    pub method: Method,
    /// `"all"` or `"covariate j"`.
    pub target: String,
    pub log_support_mass: f64,
    pub fallback: bool,
}

impl From<&SelectiveTestResult> for SelectiveTestRecord {
    fn from(r: &SelectiveTestResult) -> Self {
        SelectiveTestRecord {
            pair: (r.pair.0 + 1, r.pair.1 + 1),
            statistic: r.statistic,
            lambdas: r.lambdas().map(<[f64]>::to_vec),
            variance: r.variance(),
            truncation: r.truncation.clone(),
            p_selective: r.p_selective,
            p_naive: r.p_naive,
            wald_stat: r.wald_stat,
            metadata: TestMetadata {
                method: r.method,
                target: match r.target {
                    Target::All => "all".into(),
                    Target::Covariate(j) => format!("covariate {}", j + 1),
                },
                log_support_mass: r.log_support_mass,
                fallback: r.fallback,
            },
        }
    }
}

fn check_sigma(run: &ClusterRun, sigma: &DMatrix<f64>) -> Result<()> {
    let kp = run.k * run.p();
    if sigma.nrows() != kp || sigma.ncols() != kp {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{}, expected {kp}x{kp}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(())
}

fn diff_covariance(contrast: &Contrast, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(&contrast.r * sigma * contrast.r.transpose()))
}

/// Wald statistic and chi-square p-value for `d' V^{-1} d`.
fn wald(difference: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    let inv = spd_inverse(cov, String::new).map_err(|_| Error::SingularCovariance)?;
    let w = difference.dot(&(&inv * difference)).max(0.0);
    let chi = ChiSquared::new(difference.len() as f64).expect("positive degrees of freedom");
    Ok((w, chi.sf(w)))
}

/// Wald test of `alpha_k = alpha_k'` that ignores how the groups were found.
pub fn naive_wald(estimates: &GroupEstimates, k: usize, k_prime: usize) -> Result<(f64, f64)> {
    let kk = estimates.k();
    if k >= kk || k_prime >= kk || k == k_prime {
        return Err(Error::InvalidPair {
            k: k + 1,
            k_prime: k_prime + 1,
            reason: "groups must be distinct and in range".into(),
        });
    }
    let p = estimates.p();
    let difference = &estimates.alpha[k] - &estimates.alpha[k_prime];
    let s = &estimates.sigma;
    let cov = s.view((k * p, k * p), (p, p)) + s.view((k_prime * p, k_prime * p), (p, p))
        - s.view((k * p, k_prime * p), (p, p))
        - s.view((k_prime * p, k * p), (p, p));
    wald(&difference, &symmetrize(&cov))
}

/// Eigenvalues of `V^{1/2} (theta'theta)^{-1} V^{1/2}` above the cutoff.
fn reference_lambdas(contrast: &Contrast, cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let root = psd_sqrt(cov);
    let inv = spd_inverse(&contrast.gram_theta, || "theta'theta".into())?;
    let eig = symmetrize(&(&root * inv * &root)).symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::SingularCovariance);
    }
    Ok(eig.iter().copied().filter(|&l| l >= EIGEN_CUTOFF * max).collect())
}

fn run_test(
    run: &ClusterRun,
    k: usize,
    k_prime: usize,
    target: Target,
    sigma: &DMatrix<f64>,
    method: Method,
) -> Result<SelectiveTestResult> {
    check_sigma(run, sigma)?;
    let contrast = build_contrast(run, k, k_prime)?;
    let path = contrast.path(&run.stacked_betas(), target)?;
    let cov = diff_covariance(&contrast, sigma);
    let (reference, wald_stat, p_naive) = match target {
        Target::All => {
            let lambdas = reference_lambdas(&contrast, &cov)?;
            let (w, p) = wald(&contrast.difference, &cov)?;
            (BaseLaw::SqrtWchisq(WeightedChiSq::new(&lambdas)?), w, p)
        }
        Target::Covariate(j) => {
            let var = cov[(j, j)];
            if var.is_nan() || var <= 0.0 {
                return Err(Error::SingularCovariance);
            }
            let c = contrast.difference[j];
            let z = c.abs() / (2.0 * var).sqrt();
            (BaseLaw::folded_normal(var)?, c * c / var, statrs::function::erf::erfc(z))
        }
    };
    let truncation = truncation_set(run, &path)?;
    let law = TruncatedLaw {
        base: reference,
        support: truncation,
    };
    let sv = truncated_survival(path.statistic, &law)?;
    Ok(SelectiveTestResult {
        method,
        target,
        pair: (k, k_prime),
        statistic: path.statistic,
        reference: law.base,
        truncation: law.support,
        p_selective: sv.p_value,
        p_naive,
        wald_stat,
        log_support_mass: sv.log_support_mass,
        fallback: sv.fallback,
    })
}

/// Joint test of all slope differences between groups `k` and `k_prime`,
/// conditional on the clustering run.
pub fn selective_test(run: &ClusterRun, k: usize, k_prime: usize, sigma: &DMatrix<f64>) -> Result<SelectiveTestResult> {
    run_test(run, k, k_prime, Target::All, sigma, Method::Ls)
}

/// Test of covariate `j` (0-based) alone.
pub fn selective_test_covariate(
    run: &ClusterRun,
    k: usize,
    k_prime: usize,
    j: usize,
    sigma: &DMatrix<f64>,
) -> Result<SelectiveTestResult> {
    run_test(run, k, k_prime, Target::Covariate(j), sigma, Method::Ls)
}

/// Joint test on a run built from GMM fits.
pub fn selective_test_gmm(run: &ClusterRun, k: usize, k_prime: usize, sigma: &DMatrix<f64>) -> Result<SelectiveTestResult> {
    run_test(run, k, k_prime, Target::All, sigma, Method::Gmm)
}

/// Any target on a run from either estimator.
pub fn selective_test_with(
    run: &ClusterRun,
    k: usize,
    k_prime: usize,
    target: Target,
    sigma: &DMatrix<f64>,
    method: Method,
) -> Result<SelectiveTestResult> {
    run_test(run, k, k_prime, target, sigma, method)
}
