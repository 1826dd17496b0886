//! Monte Carlo size and power experiments.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{dgp_generate, DgpSpec};
use crate::error::{Error, Result};
use crate::kmeans::{run_kmeans_with, DEFAULT_MAX_ITER};
use crate::panel::dataset::csv_io;
use crate::panel::{fit_individuals, group_estimate_with, CovarianceKind, Estimator, GmmWeight, GroupPartition};
use crate::selective::{naive_wald, selective_test_with, Method, Target};

/// Caps the worker threads used for replications.
pub const THREADS_ENV: &str = "PANEL_SELINF_THREADS";

/// Smallest replication count accepted by the experiment runners.
pub const MIN_REPLICATIONS: usize = 100;

/// Which hypothesis each replication tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// All slopes jointly.
    All,
    /// One covariate drawn uniformly per replication.
    RandomCovariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: DgpSpec,
    pub k: usize,
    pub replications: usize,
    pub method: Method,
    pub test: TestKind,
    pub alpha: f64,
    pub max_iter: usize,
    pub covariance: CovarianceKind,
}

impl ExperimentConfig {
    pub fn new(spec: DgpSpec, k: usize, replications: usize, method: Method) -> Self {
        ExperimentConfig {
            spec,
            k,
            replications,
            method,
            test: TestKind::All,
            alpha: 0.05,
            max_iter: DEFAULT_MAX_ITER,
            covariance: CovarianceKind::default(),
        }
    }

    pub fn with_test(mut self, test: TestKind) -> Self {
        self.test = test;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_covariance(mut self, covariance: CovarianceKind) -> Self {
        self.covariance = covariance;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::InvalidSpec(format!(
                "M = {} is below the minimum of {MIN_REPLICATIONS}",
                self.replications
            )));
        }
        if self.k < 2 || self.k > self.spec.n {
            return Err(Error::InvalidSpec(format!("K = {} must lie in 2..=N", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSpec(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidSpec("maximum iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn estimator(&self) -> Estimator {
        match self.method {
            Method::Ls => Estimator::Ls,
            Method::Gmm => Estimator::Gmm(GmmWeight::TwoStage),
        }
    }
}

/// Outcome of one replication; groups and covariates are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub replication: usize,
    pub seed: u64,
    pub pair: (usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariate: Option<usize>,
    pub recovered: bool,
    pub converged: bool,
    pub p_selective: Option<f64>,
    pub p_naive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub m: usize,
    /// Selective p-values of the replications that produced one.
    pub pvalues: Vec<f64>,
    pub naive_pvalues: Vec<f64>,
    pub ks_stat: f64,
    pub naive_ks_stat: f64,
    pub recovery_probability: f64,
    /// Rejection rate among recovered replications; undefined when none
    /// were recovered.
    pub conditional_power: Option<f64>,
    /// Recovered replications rejected at `alpha`.
    pub rejections: usize,
    pub excluded: usize,
    pub not_converged: usize,
    pub replications: Vec<Replication>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    m: usize,
    ks_stat: f64,
    naive_ks_stat: f64,
    ks_critical_1pct: f64,
    naive_median: Option<f64>,
    recovery_probability: f64,
    conditional_power: Option<f64>,
    rejections: usize,
    excluded: usize,
    not_converged: usize,
}

impl ExperimentReport {
    pub fn naive_median(&self) -> Option<f64> {
        median(&self.naive_pvalues)
    }

    /// One CSV row per replication.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replication", "seed", "k", "k_prime", "covariate", "recovered", "p_selective", "p_naive", "error"])
            .map_err(csv_io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.replications {
            w.write_record([
                r.replication.to_string(),
                r.seed.to_string(),
                r.pair.0.to_string(),
                r.pair.1.to_string(),
                r.covariate.map(|j| j.to_string()).unwrap_or_default(),
                r.recovered.to_string(),
                opt(r.p_selective),
                opt(r.p_naive),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aggregate summary without the per-replication rows.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(Summary {
            config: &self.config,
            m: self.m,
            ks_stat: self.ks_stat,
            naive_ks_stat: self.naive_ks_stat,
            ks_critical_1pct: ks_critical_1pct(self.pvalues.len()),
            naive_median: self.naive_median(),
            recovery_probability: self.recovery_probability,
            conditional_power: self.conditional_power,
            rejections: self.rejections,
            excluded: self.excluded,
            not_converged: self.not_converged,
        })
        .expect("summary serialises")
    }
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Kolmogorov-Smirnov distance between the empirical law of `pvalues` and
/// Uniform(0, 1).
pub fn ks_stat(pvalues: &[f64]) -> f64 {
    let mut s = pvalues.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &p)| {
            let p = p.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - p).max(p - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS distance for `n` observations.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// `(i / (M + 1), p_(i))` pairs for a uniform Q-Q plot.
pub fn qq_data(pvalues: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pvalues.is_empty() {
        return Err(Error::InvalidArgument("no p-values to plot".into()));
    }
    let mut s = pvalues.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    Ok(s.into_iter().enumerate().map(|(i, p)| ((i as f64 + 1.0) / (m + 1.0), p)).collect())
}

/// Runs `f` on a pool sized by `PANEL_SELINF_THREADS` when it is set.
pub(crate) fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

/// Whether both selected groups coincide with true groups.
fn pair_recovered(labels: &[usize], truth: &[usize], pair: (usize, usize)) -> bool {
    let members = |lab: &[usize], g: usize| -> Vec<usize> { (0..lab.len()).filter(|&i| lab[i] == g).collect() };
    let true_groups: Vec<Vec<usize>> = (0..=truth.iter().copied().max().unwrap_or(0))
        .map(|g| members(truth, g))
        .collect();
    [pair.0, pair.1]
        .iter()
        .all(|&g| true_groups.contains(&members(labels, g)))
}

fn replicate(config: &ExperimentConfig, r: usize) -> Replication {
    let seed = config.spec.seed.wrapping_add(r as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e1e_c7ed_0000_0000);
    let a = rng.random_range(0..config.k);
    let mut b = rng.random_range(0..config.k - 1);
    if b >= a {
        b += 1;
    }
    let covariate = match config.test {
        TestKind::All => None,
        TestKind::RandomCovariate => Some(rng.random_range(0..config.spec.p)),
    };
    let mut rep = Replication {
        replication: r,
        seed,
        pair: (a + 1, b + 1),
        covariate: covariate.map(|j| j + 1),
        recovered: false,
        converged: false,
        p_selective: None,
        p_naive: None,
        error: None,
    };
    let outcome = (|| -> Result<_> {
        let sim = dgp_generate(&config.spec.with_seed(seed))?;
        let fits = fit_individuals(&sim.data, config.estimator())?;
        let run = run_kmeans_with(&fits, config.k, seed, config.max_iter, config.covariance)?;
        Ok((sim, run))
    })();
    let (sim, run) = match outcome {
        Ok(v) => v,
        Err(e) => {
            rep.error = Some(e.to_string());
            return rep;
        }
    };
    rep.converged = run.trajectory.converged;
    rep.recovered = pair_recovered(run.partition.labels(), &sim.true_labels, (a, b));
    let target = covariate.map_or(Target::All, Target::Covariate);
    match selective_test_with(&run, a, b, target, &run.estimates.sigma, config.method) {
        Ok(res) => {
            rep.p_selective = Some(res.p_selective);
            rep.p_naive = Some(res.p_naive);
        }
        Err(e) => rep.error = Some(e.to_string()),
    }
    rep
}

fn aggregate(config: ExperimentConfig, replications: Vec<Replication>) -> ExperimentReport {
    let pvalues: Vec<f64> = replications.iter().filter_map(|r| r.p_selective).collect();
    let naive_pvalues: Vec<f64> = replications.iter().filter_map(|r| r.p_naive).collect();
    let m = replications.len();
    let recovered: Vec<&Replication> = replications.iter().filter(|r| r.recovered).collect();
    let tested: Vec<f64> = recovered.iter().filter_map(|r| r.p_selective).collect();
    let rejections = tested.iter().filter(|&&p| p < config.alpha).count();
    ExperimentReport {
        config,
        m,
        ks_stat: ks_stat(&pvalues),
        naive_ks_stat: ks_stat(&naive_pvalues),
        recovery_probability: recovered.len() as f64 / m as f64,
        conditional_power: (!tested.is_empty()).then(|| rejections as f64 / tested.len() as f64),
        rejections,
        excluded: replications.iter().filter(|r| r.p_selective.is_none()).count(),
        not_converged: replications.iter().filter(|r| r.error.is_none() && !r.converged).count(),
        pvalues,
        naive_pvalues,
        replications,
    }
}

fn run_experiment(config: ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let reps = with_pool(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|r| replicate(&config, r))
            .collect::<Vec<_>>()
    })?;
    Ok(aggregate(config, reps))
}

/// Replications under a null design; the report's `ks_stat` measures how
/// far the selective p-values are from uniform.
pub fn run_size_experiment(config: ExperimentConfig) -> Result<ExperimentReport> {
    if config.spec.delta != 0.0 || config.spec.kappa != 0.0 {
        return Err(Error::InvalidSpec("size experiments need delta = 0 and kappa = 0".into()));
    }
    run_experiment(config)
}

/// Replications under separated groups; reports recovery probability and
/// power conditional on recovery.
pub fn run_power_experiment(config: ExperimentConfig) -> Result<ExperimentReport> {
    if config.spec.delta.is_nan() || config.spec.delta <= 0.0 {
        return Err(Error::InvalidSpec("power experiments need delta > 0".into()));
    }
    run_experiment(config)
}

/// Wald p-values for a split fixed before seeing the data: the first
/// `share` of units against the rest.
pub fn run_fixed_partition_experiment(spec: DgpSpec, share: f64, replications: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if replications < MIN_REPLICATIONS {
        return Err(Error::InvalidSpec(format!("M = {replications} is below the minimum of {MIN_REPLICATIONS}")));
    }
    let cut = (share * spec.n as f64).round() as usize;
    if cut == 0 || cut >= spec.n {
        return Err(Error::InvalidSpec(format!("share {share} leaves an empty group")));
    }
    let labels: Vec<usize> = (0..spec.n).map(|i| usize::from(i >= cut)).collect();
    let partition = GroupPartition::new(labels, 2)?;
    with_pool(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let sim = dgp_generate(&spec.with_seed(spec.seed.wrapping_add(r as u64)))?;
                let fits = fit_individuals(&sim.data, Estimator::Ls)?;
                let est = group_estimate_with(&fits, &partition, CovarianceKind::default())?;
                Ok(naive_wald(&est, 0, 1)?.1)
            })
            .collect::<Result<Vec<_>>>()
    })?
}
