//! Group-level aggregation of unit fits and the plug-in covariance of the
//! stacked group slopes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::estimate::IndividualFit;
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetrize};

/// Assignment of `n` units to `k` nonempty groups, labels in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    labels: Vec<usize>,
    k: usize,
}

impl GroupPartition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be positive".into()));
        }
        let mut sizes = vec![0usize; k];
        for &g in &labels {
            if g >= k {
                return Err(Error::InvalidArgument(format!("label {g} outside 0..{k}")));
            }
            sizes[g] += 1;
        }
        if let Some(group) = sizes.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateClustering { group });
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == group)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }
}

/// How the middle of the group sandwich is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Per-unit score covariances scaled by one error variance pooled over
    /// all units. Unaffected by how the units were grouped.
    #[default]
    Pooled,
    /// Per-unit score covariances, each scaled by the unit's own residual
    /// variance. Allows the error variance to differ across units.
    UnitResidual,
    /// Outer products of the unit scores evaluated at the group slope,
    /// `s_i = Q_i (beta_i - alpha_k)`.
    Cluster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimates {
    /// One p-vector per group.
    pub alpha: Vec<DVector<f64>>,
    /// `w_i = (sum_{i' in G} Q_i')^{-1} Q_i` for each unit.
    pub weights: Vec<DMatrix<f64>>,
    /// Inverse of the summed Gram matrix of each group.
    pub group_gram_inv: Vec<DMatrix<f64>>,
    /// `Kp x Kp` block-diagonal covariance of the stacked alphas.
    pub sigma: DMatrix<f64>,
}

impl GroupEstimates {
    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.alpha.first().map_or(0, |a| a.len())
    }

    pub fn stacked_alpha(&self) -> DVector<f64> {
        let p = self.p();
        DVector::from_fn(self.k() * p, |r, _| self.alpha[r / p][r % p])
    }

    pub fn sigma_block(&self, group: usize) -> DMatrix<f64> {
        let p = self.p();
        self.sigma.view((group * p, group * p), (p, p)).into_owned()
    }

    /// Per-group standard errors, square roots of the block diagonals.
    pub fn standard_errors(&self) -> Vec<DVector<f64>> {
        (0..self.k())
            .map(|g| self.sigma_block(g).diagonal().map(|v| v.max(0.0).sqrt()))
            .collect()
    }
}

fn check_lengths(fits: &[IndividualFit], partition: &GroupPartition) -> Result<()> {
    if fits.len() != partition.n() {
        return Err(Error::InvalidArgument(format!(
            "partition has {} labels for {} fits",
            partition.n(),
            fits.len()
        )));
    }
    Ok(())
}

fn group_gram_inverses(fits: &[IndividualFit], partition: &GroupPartition) -> Result<Vec<DMatrix<f64>>> {
    let p = fits[0].beta.len();
    let mut sums = vec![DMatrix::zeros(p, p); partition.k()];
    for (f, &g) in fits.iter().zip(partition.labels()) {
        sums[g] += &f.gram;
    }
    sums.iter()
        .enumerate()
        .map(|(g, a)| spd_inverse(a, || format!("summed Gram of group {}", g + 1)))
        .collect()
}

pub fn group_estimate(fits: &[IndividualFit], partition: &GroupPartition) -> Result<GroupEstimates> {
    group_estimate_with(fits, partition, CovarianceKind::default())
}

pub fn group_estimate_with(
    fits: &[IndividualFit],
    partition: &GroupPartition,
    kind: CovarianceKind,
) -> Result<GroupEstimates> {
    check_lengths(fits, partition)?;
    let p = fits[0].beta.len();
    let inv = group_gram_inverses(fits, partition)?;
    let weights: Vec<DMatrix<f64>> = fits
        .iter()
        .zip(partition.labels())
        .map(|(f, &g)| &inv[g] * &f.gram)
        .collect();
    let mut alpha = vec![DVector::zeros(p); partition.k()];
    for ((f, w), &g) in fits.iter().zip(&weights).zip(partition.labels()) {
        alpha[g] += w * &f.beta;
    }
    let sigma = sandwich(fits, partition, &inv, &alpha, kind);
    Ok(GroupEstimates {
        alpha,
        weights,
        group_gram_inv: inv,
        sigma,
    })
}

fn sandwich(
    fits: &[IndividualFit],
    partition: &GroupPartition,
    inv: &[DMatrix<f64>],
    alpha: &[DVector<f64>],
    kind: CovarianceKind,
) -> DMatrix<f64> {
    let p = alpha[0].len();
    let k = partition.k();
    let mut meat = vec![DMatrix::zeros(p, p); k];
    let pooled = fits.iter().map(|f| f.sigma2).sum::<f64>() / fits.len() as f64;
    for (f, &g) in fits.iter().zip(partition.labels()) {
        match kind {
            CovarianceKind::Pooled => meat[g] += &f.meat * pooled,
            CovarianceKind::UnitResidual => meat[g] += &f.meat * f.sigma2,
            CovarianceKind::Cluster => {
                let s = &f.gram * (&f.beta - &alpha[g]);
                meat[g] += &s * s.transpose();
            }
        }
    }
    let mut sigma = DMatrix::zeros(k * p, k * p);
    for g in 0..k {
        let block = symmetrize(&(&inv[g] * &meat[g] * &inv[g]));
        sigma.view_mut((g * p, g * p), (p, p)).copy_from(&block);
    }
    sigma
}

/// Block-diagonal `Kp x Kp` covariance of the stacked group slopes.
pub fn plugin_covariance(
    fits: &[IndividualFit],
    partition: &GroupPartition,
    kind: CovarianceKind,
) -> Result<DMatrix<f64>> {
    Ok(group_estimate_with(fits, partition, kind)?.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::dataset::{PanelDataset, UnitSeries};
    use crate::panel::estimate::{fit_individuals, Estimator};
    use crate::panel::transform::within_demean;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fit(beta: &[f64], gram: DMatrix<f64>) -> IndividualFit {
        IndividualFit {
            unit: String::new(),
            beta: DVector::from_column_slice(beta),
            meat: gram.clone(),
            sigma2: 1.0,
            gram,
            residuals: DVector::zeros(0),
        }
    }

    fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize, p: usize) -> PanelDataset {
        let series = (0..n)
            .map(|_| {
                let x = DMatrix::from_fn(t, p, |_, _| rng.random_range(-2.0..2.0));
                let b = DVector::from_fn(p, |_, _| rng.random_range(0.0..2.0));
                let y = &x * b + DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0));
                UnitSeries { y, x, z: None }
            })
            .collect();
        PanelDataset::new(
            (0..n).map(|i| i.to_string()).collect(),
            (0..t as i64).collect(),
            (1..=p).map(|j| format!("x{j}")).collect(),
            vec![],
            series,
        )
        .unwrap()
    }

    #[test]
    fn partition_rejects_empty_group() {
        assert!(GroupPartition::new(vec![0, 0, 2], 3).is_err());
        assert!(GroupPartition::new(vec![0, 1, 3], 3).is_err());
        let part = GroupPartition::new(vec![1, 0, 1], 2).unwrap();
        assert_eq!(part.members(1), vec![0, 2]);
    }

    #[test]
    fn singleton_group_has_identity_weight() {
        let fits = vec![
            fit(&[1.0, 2.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])),
            fit(&[0.0, 5.0], DMatrix::identity(2, 2)),
        ];
        let est = group_estimate(&fits, &GroupPartition::new(vec![0, 1], 2).unwrap()).unwrap();
        assert!((&est.weights[0] - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!((&est.alpha[0] - &fits[0].beta).amax() < 1e-12);
    }

    #[test]
    fn equal_grams_average_betas() {
        let g = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let fits = vec![fit(&[1.0, 0.0], g.clone()), fit(&[2.0, 1.0], g.clone()), fit(&[3.0, 5.0], g)];
        let est = group_estimate(&fits, &GroupPartition::new(vec![0, 0, 0], 1).unwrap()).unwrap();
        for w in &est.weights {
            assert!((w - DMatrix::identity(2, 2) / 3.0).amax() < 1e-12);
        }
        assert!((&est.alpha[0] - DVector::from_column_slice(&[2.0, 2.0])).amax() < 1e-12);
    }

    #[test]
    fn zero_residuals_give_zero_cluster_block() {
        let fits = vec![fit(&[1.0], DMatrix::identity(1, 1)), fit(&[1.0], DMatrix::identity(1, 1) * 2.0)];
        let part = GroupPartition::new(vec![0, 0], 1).unwrap();
        let sigma = plugin_covariance(&fits, &part, CovarianceKind::Cluster).unwrap();
        assert_eq!(sigma[(0, 0)], 0.0);
    }

    #[test]
    fn pooled_regression_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_panel(&mut rng, 9, 6, 2);
        let fits = fit_individuals(&data, Estimator::Ls).unwrap();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let part = GroupPartition::new(labels.clone(), 3).unwrap();
        let est = group_estimate(&fits, &part).unwrap();
        let d = within_demean(&data);
        for g in 0..3 {
            let members = part.members(g);
            let rows = members.len() * 6;
            let mut x = DMatrix::zeros(rows, 2);
            let mut y = DVector::zeros(rows);
            for (m, &i) in members.iter().enumerate() {
                x.view_mut((m * 6, 0), (6, 2)).copy_from(&d.blocks[i].x);
                y.rows_mut(m * 6, 6).copy_from(&d.blocks[i].y);
            }
            let pooled = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
            assert!((&pooled - &est.alpha[g]).amax() < 1e-8);
        }
    }

    #[test]
    fn sigma_is_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_panel(&mut rng, 8, 7, 2);
        let fits = fit_individuals(&data, Estimator::Ls).unwrap();
        let part = GroupPartition::new((0..8).map(|i| i / 4).collect(), 2).unwrap();
        for kind in [CovarianceKind::Pooled, CovarianceKind::UnitResidual, CovarianceKind::Cluster] {
            let s = plugin_covariance(&fits, &part, kind).unwrap();
            assert_eq!(s.view((0, 2), (2, 2)).amax(), 0.0);
            assert_eq!(s.view((2, 0), (2, 2)).amax(), 0.0);
            for g in 0..2 {
                let b = s.view((2 * g, 2 * g), (2, 2)).into_owned();
                assert!(b.symmetric_eigenvalues().min() >= -1e-14);
            }
        }
    }

    #[test]
    fn homoskedastic_block_matches_monte_carlo() {
        // fixed design, resampled errors
        let (n, t, p) = (20, 10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(t, p, |_, _| rng.random_range(-2.0..2.0))).collect();
        let part = GroupPartition::new(vec![0; n], 1).unwrap();
        let normal = rand_distr::StandardNormal;
        let reps = 2000;
        let mut alphas = Vec::with_capacity(reps);
        let mut blocks = DMatrix::zeros(p, p);
        let mut unit_blocks = DMatrix::zeros(p, p);
        let mut cluster_blocks = DMatrix::zeros(p, p);
        for _ in 0..reps {
            let series = xs
                .iter()
                .map(|x| UnitSeries {
                    y: x * DVector::from_element(p, 1.0) + DVector::from_fn(t, |_, _| rng.sample::<f64, _>(normal)),
                    x: x.clone(),
                    z: None,
                })
                .collect();
            let data = PanelDataset::new(
                (0..n).map(|i| i.to_string()).collect(),
                (0..t as i64).collect(),
                vec!["x1".into(), "x2".into()],
                vec![],
                series,
            )
            .unwrap();
            let fits = fit_individuals(&data, Estimator::Ls).unwrap();
            let est = group_estimate(&fits, &part).unwrap();
            blocks += &est.sigma;
            unit_blocks += plugin_covariance(&fits, &part, CovarianceKind::UnitResidual).unwrap();
            cluster_blocks += plugin_covariance(&fits, &part, CovarianceKind::Cluster).unwrap();
            alphas.push(est.alpha[0].clone());
        }
        let mean = alphas.iter().fold(DVector::zeros(p), |a, b| a + b) / reps as f64;
        let emp = alphas.iter().fold(DMatrix::zeros(p, p), |acc, a| {
            let d = a - &mean;
            acc + &d * d.transpose()
        }) / (reps - 1) as f64;
        // demeaned x has sigma^2 = 1 covariance σ² A^{-1}
        let a: DMatrix<f64> = xs
            .iter()
            .map(|x| {
                let mut xd = x.clone();
                for mut c in xd.column_iter_mut() {
                    let m = c.mean();
                    c.add_scalar_mut(-m);
                }
                xd.transpose() * xd
            })
            .fold(DMatrix::zeros(p, p), |s, g| s + g);
        let theory = a.try_inverse().unwrap();
        for est in [blocks, unit_blocks, cluster_blocks].map(|b| b / reps as f64) {
            for r in 0..p {
                assert!((est[(r, r)] - emp[(r, r)]).abs() < 0.1 * emp[(r, r)]);
                assert!((est[(r, r)] - theory[(r, r)]).abs() < 0.1 * theory[(r, r)]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn weights_partition_identity_and_pooled_equivalence(seed in any::<u64>(), n in 3usize..30, p in 1usize..=4, k in 1usize..=3) {
            prop_assume!(n >= k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = p + 3;
            let data = random_panel(&mut rng, n, t, p);
            let fits = fit_individuals(&data, Estimator::Ls).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            let part = GroupPartition::new(labels, k).unwrap();
            let est = group_estimate(&fits, &part).unwrap();
            let d = within_demean(&data);
            for g in 0..k {
                let members = part.members(g);
                let wsum = members.iter().fold(DMatrix::zeros(p, p), |s, &i| s + &est.weights[i]);
                prop_assert!((wsum - DMatrix::identity(p, p)).amax() < 1e-10);
                let mut xtx = DMatrix::zeros(p, p);
                let mut xty = DVector::zeros(p);
                for &i in &members {
                    xtx += d.blocks[i].x.transpose() * &d.blocks[i].x;
                    xty += d.blocks[i].x.transpose() * &d.blocks[i].y;
                }
                let pooled = xtx.try_inverse().unwrap() * xty;
                prop_assert!((&pooled - &est.alpha[g]).amax() < 1e-8 * (1.0 + pooled.amax()));
            }
        }
    }
}
