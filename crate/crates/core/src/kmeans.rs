//! Matrix-weighted k-means over unit coefficient vectors.
//!
//! Each unit carries its own metric `Q_i`, so the distance from unit `i` to a
//! centroid `m` is `(beta_i - m)' Q_i (beta_i - m)` and centroids are the
//! `Q`-weighted combinations of their members. The run keeps every
//! intermediate assignment so the clustering can later be replayed exactly
//! on perturbed coefficients.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{quad_form, spd_inverse};
use crate::panel::{group_estimate_with, CovarianceKind, GroupEstimates, GroupPartition, IndividualFit};

pub const DEFAULT_MAX_ITER: usize = 100;

/// An empty group at update step `iteration` was re-seeded with `unit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reseed {
    pub iteration: usize,
    pub group: usize,
    pub unit: usize,
}

/// Assignment history of one k-means run, independent of how the
/// coefficients were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub init_indices: Vec<usize>,
    /// `trace[s]` holds the labels after the assignment step of iteration `s`.
    pub trace: Vec<Vec<usize>>,
    /// Centroids used by the assignment step of iteration `s`.
    pub centroids_trace: Vec<Vec<DVector<f64>>>,
    pub reseeds: Vec<Reseed>,
    pub converged: bool,
}

impl Trajectory {
    /// Number of update iterations performed after the initial assignment.
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn final_labels(&self) -> &[usize] {
        self.trace.last().expect("trace holds at least the initial assignment")
    }

    /// Whether two runs made exactly the same decisions.
    pub fn same_event(&self, other: &Trajectory) -> bool {
        self.init_indices == other.init_indices && self.trace == other.trace && self.reseeds == other.reseeds
    }
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub seed: u64,
    pub k: usize,
    pub max_iter: usize,
    pub trajectory: Trajectory,
    pub partition: GroupPartition,
    pub estimates: GroupEstimates,
    pub betas: Vec<DVector<f64>>,
    pub grams: Vec<DMatrix<f64>>,
}

impl ClusterRun {
    pub fn n(&self) -> usize {
        self.betas.len()
    }

    pub fn p(&self) -> usize {
        self.betas[0].len()
    }

    pub fn init_indices(&self) -> &[usize] {
        &self.trajectory.init_indices
    }

    pub fn trace(&self) -> &[Vec<usize>] {
        &self.trajectory.trace
    }

    pub fn iterations(&self) -> usize {
        self.trajectory.iterations()
    }

    /// Stacked `Np` coefficient vector.
    pub fn stacked_betas(&self) -> DVector<f64> {
        stack(&self.betas)
    }

    /// Replays the run on other coefficients, same metrics and same initial
    /// units.
    pub fn replay(&self, betas: &[DVector<f64>]) -> Result<Trajectory> {
        cluster_from(betas, &self.grams, &self.trajectory.init_indices, self.max_iter)
    }
}

/// JSON audit record of a run; labels and groups are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRunRecord {
    pub seed: u64,
    pub k: usize,
    pub init_indices: Vec<usize>,
    pub trace: Vec<Vec<usize>>,
    pub reseeds: Vec<Reseed>,
    pub iterations: usize,
    pub converged: bool,
    pub labels: Vec<usize>,
    pub alpha: Vec<Vec<f64>>,
    pub standard_errors: Vec<Vec<f64>>,
}

impl From<&ClusterRun> for ClusterRunRecord {
    fn from(run: &ClusterRun) -> Self {
        let one_based = |v: &[usize]| v.iter().map(|g| g + 1).collect::<Vec<_>>();
        ClusterRunRecord {
            seed: run.seed,
            k: run.k,
            init_indices: one_based(&run.trajectory.init_indices),
            trace: run.trajectory.trace.iter().map(|g| one_based(g)).collect(),
            reseeds: run
                .trajectory
                .reseeds
                .iter()
                .map(|r| Reseed {
                    iteration: r.iteration,
                    group: r.group + 1,
                    unit: r.unit + 1,
                })
                .collect(),
            iterations: run.iterations(),
            converged: run.trajectory.converged,
            labels: one_based(run.partition.labels()),
            alpha: run.estimates.alpha.iter().map(|a| a.iter().copied().collect()).collect(),
            standard_errors: run
                .estimates
                .standard_errors()
                .iter()
                .map(|s| s.iter().copied().collect())
                .collect(),
        }
    }
}

pub(crate) fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let p = blocks[0].len();
    DVector::from_fn(blocks.len() * p, |r, _| blocks[r / p][r % p])
}

pub(crate) fn unstack(v: &DVector<f64>, p: usize) -> Vec<DVector<f64>> {
    (0..v.len() / p).map(|i| v.rows(i * p, p).into_owned()).collect()
}

/// `K` distinct unit indices drawn without replacement.
pub fn init_centroids(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, k).into_vec())
}

pub fn weighted_distance(beta: &DVector<f64>, gram: &DMatrix<f64>, centroid: &DVector<f64>) -> f64 {
    quad_form(gram, &(beta - centroid))
}

/// Nearest centroid under each unit's own metric; ties go to the smaller
/// group index.
pub fn assign(betas: &[DVector<f64>], grams: &[DMatrix<f64>], centroids: &[DVector<f64>]) -> Vec<usize> {
    betas
        .iter()
        .zip(grams)
        .map(|(b, q)| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in centroids.iter().enumerate() {
                let d = weighted_distance(b, q, c);
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// `sum_i (beta_i - m_{g_i})' Q_i (beta_i - m_{g_i})`.
pub fn objective(betas: &[DVector<f64>], grams: &[DMatrix<f64>], labels: &[usize], centroids: &[DVector<f64>]) -> f64 {
    betas
        .iter()
        .zip(grams)
        .zip(labels)
        .map(|((b, q), &g)| weighted_distance(b, q, &centroids[g]))
        .sum()
}

/// Unit whose distance to its own centroid is largest, skipping `taken`.
pub(crate) fn farthest_unit(
    betas: &[DVector<f64>],
    grams: &[DMatrix<f64>],
    labels: &[usize],
    centroids: &[DVector<f64>],
    taken: &[usize],
) -> usize {
    let mut best = usize::MAX;
    let mut best_d = f64::NEG_INFINITY;
    for (i, ((b, q), &g)) in betas.iter().zip(grams).zip(labels).enumerate() {
        if taken.contains(&i) {
            continue;
        }
        let d = weighted_distance(b, q, &centroids[g]);
        if d > best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn update_centroids(
    betas: &[DVector<f64>],
    grams: &[DMatrix<f64>],
    labels: &[usize],
    previous: &[DVector<f64>],
    iteration: usize,
    reseeds: &mut Vec<Reseed>,
) -> Result<Vec<DVector<f64>>> {
    let k = previous.len();
    let p = betas[0].len();
    let mut gram_sum = vec![DMatrix::<f64>::zeros(p, p); k];
    let mut moment = vec![DVector::<f64>::zeros(p); k];
    let mut size = vec![0usize; k];
    for ((b, q), &g) in betas.iter().zip(grams).zip(labels) {
        gram_sum[g] += q;
        moment[g] += q * b;
        size[g] += 1;
    }
    let mut taken = Vec::new();
    let mut centroids = Vec::with_capacity(k);
    for g in 0..k {
        if size[g] == 0 {
            let unit = farthest_unit(betas, grams, labels, previous, &taken);
            taken.push(unit);
            reseeds.push(Reseed { iteration, group: g, unit });
            centroids.push(betas[unit].clone());
        } else {
            let inv = spd_inverse(&gram_sum[g], || format!("summed Gram of cluster {}", g + 1))?;
            centroids.push(inv * &moment[g]);
        }
    }
    Ok(centroids)
}

/// Runs k-means from the given initial units.
pub fn cluster_from(
    betas: &[DVector<f64>],
    grams: &[DMatrix<f64>],
    init_indices: &[usize],
    max_iter: usize,
) -> Result<Trajectory> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("maximum iterations must be at least 1".into()));
    }
    let mut centroids: Vec<DVector<f64>> = init_indices.iter().map(|&i| betas[i].clone()).collect();
    let mut labels = assign(betas, grams, &centroids);
    let mut trace = vec![labels.clone()];
    let mut centroids_trace = vec![centroids.clone()];
    let mut reseeds = Vec::new();
    let mut converged = false;
    for s in 1..=max_iter {
        centroids = update_centroids(betas, grams, &labels, &centroids, s, &mut reseeds)?;
        let next = assign(betas, grams, &centroids);
        trace.push(next.clone());
        centroids_trace.push(centroids.clone());
        let fixed = next == labels;
        labels = next;
        if fixed {
            converged = true;
            break;
        }
    }
    Ok(Trajectory {
        init_indices: init_indices.to_vec(),
        trace,
        centroids_trace,
        reseeds,
        converged,
    })
}

pub fn run_kmeans(fits: &[IndividualFit], k: usize, seed: u64, max_iter: usize) -> Result<ClusterRun> {
    run_kmeans_with(fits, k, seed, max_iter, CovarianceKind::default())
}

pub fn run_kmeans_with(
    fits: &[IndividualFit],
    k: usize,
    seed: u64,
    max_iter: usize,
    covariance: CovarianceKind,
) -> Result<ClusterRun> {
    let init = init_centroids(fits.len(), k, seed)?;
    let betas: Vec<DVector<f64>> = fits.iter().map(|f| f.beta.clone()).collect();
    let grams: Vec<DMatrix<f64>> = fits.iter().map(|f| f.gram.clone()).collect();
    let trajectory = cluster_from(&betas, &grams, &init, max_iter)?;
    let partition = GroupPartition::new(trajectory.final_labels().to_vec(), k)?;
    let estimates = group_estimate_with(fits, &partition, covariance)?;
    Ok(ClusterRun {
        seed,
        k,
        max_iter,
        trajectory,
        partition,
        estimates,
        betas,
        grams,
    })
}
