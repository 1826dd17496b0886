//! The contrast between two selected groups and the one-parameter path of
//! coefficient vectors that moves only the tested statistic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{unstack, ClusterRun};
use crate::linalg::spd_inverse;

/// Below this norm the direction of the projected statistic is undefined.
pub const DEGENERACY_NORM: f64 = 1e-12;

/// Which difference between the two groups is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// All `p` slope differences jointly.
    All,
    /// Only covariate `j` (0-based).
    Covariate(usize),
}

#[derive(Debug, Clone)]
pub struct Contrast {
    pub pair: (usize, usize),
    /// `+1` in the first group, `-1` in the second, `0` elsewhere.
    pub v: Vec<i8>,
    /// `Np x p`; block `i` is `v_i w_i'`.
    pub theta: DMatrix<f64>,
    /// `p x Kp` selector with `R alpha = alpha_k - alpha_k'`.
    pub r: DMatrix<f64>,
    pub gram_theta: DMatrix<f64>,
    /// `theta' B = alpha_k - alpha_k'`.
    pub difference: DVector<f64>,
}

pub fn build_contrast(run: &ClusterRun, k: usize, k_prime: usize) -> Result<Contrast> {
    let kk = run.k;
    let invalid = |reason: &str| Error::InvalidPair {
        k: k + 1,
        k_prime: k_prime + 1,
        reason: reason.into(),
    };
    if kk < 2 {
        return Err(invalid("at least two groups are needed"));
    }
    if k >= kk || k_prime >= kk {
        return Err(invalid("group index out of range"));
    }
    if k == k_prime {
        return Err(invalid("groups must differ"));
    }
    let n = run.n();
    let p = run.p();
    let labels = run.partition.labels();
    let v: Vec<i8> = labels
        .iter()
        .map(|&g| if g == k { 1 } else if g == k_prime { -1 } else { 0 })
        .collect();
    let mut theta = DMatrix::zeros(n * p, p);
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0 {
            let block = run.estimates.weights[i].transpose() * f64::from(vi);
            theta.view_mut((i * p, 0), (p, p)).copy_from(&block);
        }
    }
    let mut r = DMatrix::zeros(p, kk * p);
    for j in 0..p {
        r[(j, k * p + j)] = 1.0;
        r[(j, k_prime * p + j)] = -1.0;
    }
    let gram_theta = theta.transpose() * &theta;
    let difference = &run.estimates.alpha[k] - &run.estimates.alpha[k_prime];
    let via_theta = theta.transpose() * run.stacked_betas();
    let tol = 1e-8 * (1.0 + difference.amax());
    if (&via_theta - &difference).amax() > tol {
        return Err(Error::InvalidArgument(format!(
            "contrast does not reproduce the group difference: {via_theta} vs {difference}"
        )));
    }
    Ok(Contrast {
        pair: (k, k_prime),
        v,
        theta,
        r,
        gram_theta,
        difference,
    })
}

/// `B(phi) = B_hat + (phi - statistic) * direction`, on which the tested
/// statistic equals `phi` and everything orthogonal to it is fixed.
#[derive(Debug, Clone)]
pub struct PerturbationPath {
    pub target: Target,
    pub statistic: f64,
    pub base: DVector<f64>,
    pub direction: DVector<f64>,
    p: usize,
}

impl Contrast {
    pub fn path(&self, bhat: &DVector<f64>, target: Target) -> Result<PerturbationPath> {
        let p = self.theta.ncols();
        let (statistic, direction) = match target {
            Target::All => {
                let inv = spd_inverse(&self.gram_theta, || "theta'theta".into())?;
                let coef = &inv * &self.difference;
                let norm = self.difference.dot(&coef).max(0.0).sqrt();
                if norm < DEGENERACY_NORM {
                    return Err(Error::DegenerateDirection { norm });
                }
                (norm, &self.theta * coef / norm)
            }
            Target::Covariate(j) => {
                if j >= p {
                    return Err(Error::InvalidArgument(format!("covariate {} out of range 1..={p}", j + 1)));
                }
                let c = self.difference[j];
                if c.abs() < DEGENERACY_NORM {
                    return Err(Error::DegenerateDirection { norm: c.abs() });
                }
                let col = self.theta.column(j).into_owned();
                let direction = &col * (c.signum() / col.norm_squared());
                (c.abs(), direction)
            }
        };
        Ok(PerturbationPath {
            target,
            statistic,
            base: bhat.clone(),
            direction,
            p,
        })
    }
}

impl PerturbationPath {
    pub fn at(&self, phi: f64) -> DVector<f64> {
        let shift = phi - self.statistic;
        let mut out = self.base.clone();
        for (o, d) in out.iter_mut().zip(self.direction.iter()) {
            if *d != 0.0 {
                *o += d * shift;
            }
        }
        out
    }

    pub fn blocks_at(&self, phi: f64) -> Vec<DVector<f64>> {
        unstack(&self.at(phi), self.p)
    }

    /// Observed coefficients of unit `i`.
    pub fn unit_base(&self, i: usize) -> DVector<f64> {
        self.base.rows(i * self.p, self.p).into_owned()
    }

    /// Rate of change of unit `i`'s coefficients along the path.
    pub fn unit_direction(&self, i: usize) -> DVector<f64> {
        self.direction.rows(i * self.p, self.p).into_owned()
    }
}

/// `B(phi) = dir(P_theta B) phi + P_theta^perp B` for the joint test.
pub fn perturb(bhat: &DVector<f64>, contrast: &Contrast, phi: f64) -> Result<DVector<f64>> {
    Ok(contrast.path(bhat, Target::All)?.at(phi))
}
