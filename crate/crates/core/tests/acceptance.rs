//! Acceptance suite: one line per criterion, run with
//! `cargo test -p panel-selinf --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use panel_selinf::dist::{wchisq_cdf, wchisq_cdf_mc, WeightedChiSq};
use panel_selinf::kmeans::{run_kmeans, weighted_distance, ClusterRun, DEFAULT_MAX_ITER};
use panel_selinf::panel::{fit_individuals, Estimator, GmmWeight, IndividualFit};
use panel_selinf::selective::{
    build_contrast, lemma1_coeffs, lemma2_coeffs, perturb, truncation_set, Method, PerturbationPath, Target,
};
use panel_selinf::sim::{
    dgp_generate, ks_critical_1pct, ks_stat, run_fixed_partition_experiment, run_power_experiment,
    run_size_experiment, DgpId, DgpSpec, ExperimentConfig, ExperimentReport, TestKind,
};

const M: usize = 1000;
const SIZE_SEED: u64 = 20_240_601;
const POWER_SEED: u64 = 7_000_000;

/// Criteria that were run as stated and could not be met; see README.
const KNOWN_UNMET: &[(u32, &str)] = &[(
    4,
    "LS stays valid on this design: the within-estimator bias is common to every unit under delta = kappa = 0 and cancels in group differences",
)];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let dgp1 = size_report(DgpId::Dgp1, 2, Method::Ls, TestKind::All);
    outcomes.push(criterion_1(&dgp1));
    outcomes.push(criterion_2(&dgp1));
    outcomes.push(criterion_3());
    outcomes.push(criterion_4());
    outcomes.push(criterion_5());
    outcomes.push(criterion_6());
    outcomes.push(criterion_7());
    outcomes.push(criterion_8());
    outcomes.push(criterion_9());
    outcomes.push(criterion_10());

    let mut unexpected = 0;
    for o in &outcomes {
        let known = KNOWN_UNMET.iter().find(|(id, _)| *id == o.id);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2}: {verdict}  {}", o.id, o.detail);
        match (o.pass, known) {
            (false, Some((_, why))) => println!("               known unmet: {why}"),
            (false, None) => unexpected += 1,
            (true, Some(_)) => println!("               listed as unmet but passed this run"),
            (true, None) => {}
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass in {:.1?}", outcomes.len(), start.elapsed());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn size_report(id: DgpId, k: usize, method: Method, test: TestKind) -> ExperimentReport {
    let spec = DgpSpec::new(id, 60, 15, 0.0, SIZE_SEED);
    run_size_experiment(ExperimentConfig::new(spec, k, M, method).with_test(test)).expect("size experiment runs")
}

fn band() -> f64 {
    ks_critical_1pct(M)
}

fn criterion_1(dgp1: &ExperimentReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (id, report) in [
        (DgpId::Dgp1, None),
        (DgpId::Dgp2, Some(size_report(DgpId::Dgp2, 2, Method::Ls, TestKind::All))),
        (DgpId::Dgp3, Some(size_report(DgpId::Dgp3, 2, Method::Ls, TestKind::All))),
    ] {
        let r = report.as_ref().unwrap_or(dgp1);
        pass &= r.pvalues.len() == M && r.ks_stat < band();
        parts.push(format!("{id} KS {:.4} (n {})", r.ks_stat, r.pvalues.len()));
    }
    Outcome {
        id: 1,
        pass,
        detail: format!("selective null uniformity, band {:.4}: {}", band(), parts.join(", ")),
    }
}

fn criterion_2(dgp1: &ExperimentReport) -> Outcome {
    let median = dgp1.naive_median().unwrap_or(1.0);
    let below = dgp1.naive_pvalues.iter().filter(|&&p| p < 0.05).count() as f64 / dgp1.naive_pvalues.len() as f64;
    Outcome {
        id: 2,
        pass: median < 0.01 && below >= 0.95,
        detail: format!("naive Wald after clustering: median {median:.2e}, share below 0.05 {below:.3}"),
    }
}

fn criterion_3() -> Outcome {
    let spec = DgpSpec::new(DgpId::Dgp1, 60, 15, 0.0, SIZE_SEED);
    let p = run_fixed_partition_experiment(spec, 0.4, M).expect("fixed split runs");
    let ks = ks_stat(&p);
    Outcome {
        id: 3,
        pass: p.len() == M && ks < band(),
        detail: format!("pre-registered 40/60 split, Wald KS {ks:.4}"),
    }
}

/// Largest distance of the ECDF above and below the diagonal.
fn signed_ks(pvalues: &[f64]) -> (f64, f64) {
    let mut s = pvalues.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold((0.0, 0.0), |(up, down), (i, &p)| {
        (f64::max(up, (i as f64 + 1.0) / n - p), f64::max(down, p - i as f64 / n))
    })
}

fn criterion_4() -> Outcome {
    let gmm = size_report(DgpId::Dgp4, 3, Method::Gmm, TestKind::All);
    let ls = size_report(DgpId::Dgp4, 3, Method::Ls, TestKind::All);
    let (up, down) = signed_ks(&ls.pvalues);
    let gmm_ok = gmm.pvalues.len() == M && gmm.ks_stat < band();
    let ls_fails_above = ls.ks_stat >= band() && up > down;
    Outcome {
        id: 4,
        pass: gmm_ok && ls_fails_above,
        detail: format!(
            "dgp4: GMM KS {:.4} ({}); LS KS {:.4} with ECDF above {up:.4} / below {down:.4} ({})",
            gmm.ks_stat,
            if gmm_ok { "passes" } else { "fails" },
            ls.ks_stat,
            if ls_fails_above { "fails above, as required" } else { "does not fail above" },
        ),
    }
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for id in [DgpId::Dgp5, DgpId::Dgp6] {
        let r = size_report(id, 3, Method::Ls, TestKind::RandomCovariate);
        pass &= r.pvalues.len() == M && r.ks_stat < band();
        parts.push(format!("{id} KS {:.4}", r.ks_stat));
    }
    Outcome {
        id: 5,
        pass,
        detail: format!("single-covariate tests with random j: {}", parts.join(", ")),
    }
}

/// Units scattered around `k` random centres with random positive definite
/// metrics.
fn random_fits(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> Vec<IndividualFit> {
    let centres: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0))).collect();
    (0..n)
        .map(|i| {
            let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let gram = &a * a.transpose() + DMatrix::identity(p, p) * 0.5;
            IndividualFit {
                unit: i.to_string(),
                beta: &centres[i % k] + DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)),
                meat: gram.clone(),
                gram,
                residuals: DVector::zeros(0),
                sigma2: 1.0,
            }
        })
        .collect()
}

fn random_run(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> Option<ClusterRun> {
    let fits = random_fits(rng, n, p, k);
    run_kmeans(&fits, k, rng.random(), DEFAULT_MAX_ITER).ok()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut instances, mut points, mut skipped, mut disagreements) = (0, 0, 0, 0);
    while instances < 50 {
        let n = rng.random_range(6..=24);
        let k = rng.random_range(2..=3);
        let p = rng.random_range(1..=2);
        let Some(run) = random_run(&mut rng, n, p, k) else { continue };
        let bhat = run.stacked_betas();
        let Ok(path) = build_contrast(&run, 0, 1).and_then(|c| c.path(&bhat, Target::All)) else { continue };
        let set = truncation_set(&run, &path).expect("truncation set");
        let hi = 3.0 * path.statistic;
        for g in 0..400 {
            let phi = hi * g as f64 / 399.0;
            if set.boundary_distance(phi) < 1e-6 {
                skipped += 1;
                continue;
            }
            let same = run.replay(&path.blocks_at(phi)).is_ok_and(|t| t.same_event(&run.trajectory));
            points += 1;
            if same != set.contains(phi) {
                disagreements += 1;
            }
        }
        instances += 1;
    }
    Outcome {
        id: 6,
        pass: disagreements == 0,
        detail: format!(
            "grid re-clustering on {instances} instances: {disagreements} disagreements over {points} points ({skipped} boundary points skipped)"
        ),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Worst relative error of both lemma quadratics against direct norms along
/// `path`, at 20 random `phi`.
fn lemma_errors(rng: &mut ChaCha8Rng, run: &ClusterRun, path: &PerturbationPath) -> f64 {
    let n = run.n();
    let p = run.p();
    let mut worst: f64 = 0.0;
    let (i, ip) = (rng.random_range(0..n), rng.random_range(0..n));
    let s = rng.random_range(1..=run.iterations().max(1));
    let k = rng.random_range(0..run.k);
    let labels = &run.trajectory.trace[s - 1];
    let has_k = labels.contains(&k) && run.trajectory.reseeds.is_empty();
    let q1 = lemma1_coeffs(i, ip, path, run);
    let q2 = has_k.then(|| lemma2_coeffs(i, k, s, path, run).expect("lemma 2 coefficients"));
    for _ in 0..20 {
        let phi = rng.random_range(0.0..3.0 * path.statistic + 1.0);
        let b = path.blocks_at(phi);
        let direct = weighted_distance(&b[i], &run.grams[i], &b[ip]);
        worst = worst.max(rel_err(q1.eval(phi), direct));
        if let Some(q2) = &q2 {
            let mut gsum = DMatrix::zeros(p, p);
            let mut mom = DVector::zeros(p);
            for (u, &g) in labels.iter().enumerate() {
                if g == k {
                    gsum += &run.grams[u];
                    mom += &run.grams[u] * &b[u];
                }
            }
            let centroid = gsum.try_inverse().expect("cluster Gram invertible") * mom;
            worst = worst.max(rel_err(q2.eval(phi), weighted_distance(&b[i], &run.grams[i], &centroid)));
        }
    }
    worst
}

fn gmm_run(seed: u64) -> Option<ClusterRun> {
    let data = dgp_generate(&DgpSpec::new(DgpId::Dgp4, 24, 10, 0.5, seed)).ok()?.data;
    let fits = fit_individuals(&data, Estimator::Gmm(GmmWeight::TwoStage)).ok()?;
    run_kmeans(&fits, 2, seed, DEFAULT_MAX_ITER).ok()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    let mut counts = [0usize; 3];
    let mut attempt = 0u64;
    while counts.iter().sum::<usize>() < 100 {
        attempt += 1;
        let kind = (attempt % 3) as usize;
        let run = match kind {
            2 => gmm_run(attempt),
            _ => {
                let (n, p, k) = (rng.random_range(8..=24), rng.random_range(1..=3), rng.random_range(2..=3));
                random_run(&mut rng, n, p, k)
            }
        };
        let Some(run) = run else { continue };
        let target = if kind == 1 { Target::Covariate(run.p() - 1) } else { Target::All };
        let Ok(path) = build_contrast(&run, 0, 1).and_then(|c| c.path(&run.stacked_betas(), target)) else { continue };
        worst = worst.max(lemma_errors(&mut rng, &run, &path));
        counts[kind] += 1;
    }
    Outcome {
        id: 7,
        pass: worst < 1e-8,
        detail: format!(
            "lemma quadratics vs direct norms on {} joint, {} covariate, {} GMM instances: worst relative error {worst:.2e}",
            counts[0], counts[1], counts[2]
        ),
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let draws = 1_000_000;
    let mut worst_se: f64 = 0.0;
    for pair in 0..50 {
        let r = rng.random_range(1..=5);
        let lambdas: Vec<f64> = (0..r).map(|_| rng.random_range(0.05..3.0)).collect();
        let law = WeightedChiSq::new(&lambdas).expect("positive weights");
        let x = law.mean() * rng.random_range(0.1..3.0);
        let exact = wchisq_cdf(x, &law);
        let mc = wchisq_cdf_mc(x, &law, draws, 80_000 + pair).expect("Monte Carlo CDF");
        let se = (exact * (1.0 - exact) / draws as f64).sqrt();
        worst_se = worst_se.max((exact - mc).abs() / se);
    }
    let mut closed: f64 = 0.0;
    for x in [0.01, 0.3, 1.0, 3.841458820694124, 9.0, 25.0] {
        let chi1 = ChiSquared::new(1.0).unwrap().cdf(x);
        closed = closed.max((wchisq_cdf(x, &WeightedChiSq::new(&[1.0]).unwrap()) - chi1).abs());
        for (m, l) in [(2usize, 0.7), (3, 1.5), (4, 0.25)] {
            let law = WeightedChiSq::new(&vec![l; m]).unwrap();
            let expected = ChiSquared::new(m as f64).unwrap().cdf(x / l);
            closed = closed.max((wchisq_cdf(x, &law) - expected).abs());
        }
    }
    Outcome {
        id: 8,
        pass: worst_se <= 3.0 && closed < 1e-7,
        detail: format!("weighted chi-square CDF: worst MC gap {worst_se:.2} SE over 50 pairs, closed forms within {closed:.1e}"),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst: f64 = 0.0;
    let mut exact_at_observed = true;
    let mut instances = 0;
    while instances < 100 {
        let (n, p, k) = (rng.random_range(6..=24), rng.random_range(1..=3), rng.random_range(2..=3));
        let Some(run) = random_run(&mut rng, n, p, k) else { continue };
        let Ok(c) = build_contrast(&run, 0, 1) else { continue };
        let bhat = run.stacked_betas();
        let Ok(path) = c.path(&bhat, Target::All) else { continue };
        let inv = (c.theta.transpose() * &c.theta).try_inverse().expect("theta has full column rank");
        let proj = &c.theta * inv * c.theta.transpose();
        let perp = DMatrix::identity(bhat.len(), bhat.len()) - &proj;
        let pb = &proj * &bhat;
        let stat = path.statistic;
        for phi in [0.0, 0.5 * stat, stat, 2.0 * stat, rng.random_range(0.0..10.0)] {
            let b = perturb(&bhat, &c, phi).expect("path defined");
            worst = worst.max((&perp * &b - &perp * &bhat).amax());
            let pbp = &proj * &b;
            worst = worst.max((pbp.norm() - phi).abs());
            if phi > 0.0 {
                worst = worst.max((pbp / phi - &pb / stat).amax());
            }
        }
        worst = worst.max((pb.norm() - stat).abs());
        exact_at_observed &= perturb(&bhat, &c, stat).expect("path defined") == bhat;
        instances += 1;
    }
    Outcome {
        id: 9,
        pass: worst <= 1e-10 && exact_at_observed,
        detail: format!(
            "perturbation path on {instances} instances: worst deviation {worst:.1e}, B(observed) == B exactly: {exact_at_observed}"
        ),
    }
}

fn criterion_10() -> Outcome {
    let mut rows = Vec::new();
    for delta in [0.4, 1.2, 2.0] {
        let spec = DgpSpec::new(DgpId::Dgp1, 120, 25, delta, POWER_SEED);
        let r = run_power_experiment(ExperimentConfig::new(spec, 3, 300, Method::Ls)).expect("power experiment runs");
        rows.push((delta, r.recovery_probability, r.conditional_power));
    }
    let recovery_monotone = rows.windows(2).all(|w| w[1].1 >= w[0].1);
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.2).collect();
    let power_monotone = defined.windows(2).all(|w| w[1] >= w[0]);
    let (_, rec_top, pow_top) = rows[2];
    let pass = recovery_monotone && power_monotone && rec_top >= 0.9 && pow_top.is_some_and(|p| p >= 0.8);
    let table: Vec<String> = rows
        .iter()
        .map(|(d, rec, pow)| match pow {
            Some(p) => format!("delta {d}: recovery {rec:.3}, power {p:.3}"),
            None => format!("delta {d}: recovery {rec:.3}, power undefined"),
        })
        .collect();
    Outcome {
        id: 10,
        pass,
        detail: format!("power on dgp1 N=120 T=25: {}", table.join("; ")),
    }
}
