use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use panel_selinf::kmeans::{run_kmeans_with, ClusterRun, ClusterRunRecord, DEFAULT_MAX_ITER};
use panel_selinf::panel::{fit_individuals, load_panel, CovarianceKind, Estimator, GmmWeight, PanelDataset};
use panel_selinf::selective::{build_contrast, selective_test_with, truncation_set, Method, SelectiveTestRecord, Target};
use panel_selinf::sim::{
    dgp_generate, qq_data, ks_stat, run_power_experiment, run_size_experiment, DgpId, DgpSpec, ExperimentConfig,
    ExperimentReport, TestKind,
};
use panel_selinf::{Error, Result};

#[derive(Parser)]
#[command(name = "panel-selinf", version, about = "Selective inference after k-means grouping of panel slopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate unit slopes and cluster them into K groups.
    Fit,
    /// Selective and naive tests of equal slopes between two estimated groups.
    Test,
    /// Monte Carlo size or power experiment on a simulated design.
    Simulate,
    /// Coefficients along the perturbation path at one value of phi.
    Perturb,
    /// Uniform Q-Q data from a replications CSV.
    Qq,
}

#[derive(Args)]
struct Opts {
    /// Panel CSV (`unit,time,y,x1..xp[,z1..zq]`), or replications CSV for `qq`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Ls)]
    method: MethodArg,
    /// Groups to compare, 1-based.
    #[arg(long, global = true, value_parser = parse_pair, default_value = "1,2")]
    pair: (usize, usize),
    /// Test this covariate alone (1-based).
    #[arg(long, global = true)]
    covariate: Option<usize>,
    #[arg(long, global = true, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, global = true, value_parser = parse_dgp)]
    dgp: Option<DgpId>,
    #[arg(long = "N", global = true, default_value_t = 60)]
    n: usize,
    #[arg(long = "T", global = true, default_value_t = 15)]
    t: usize,
    #[arg(long, global = true, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, global = true, default_value_t = 0.0)]
    kappa: f64,
    /// Number of regressors; must agree with the design.
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long = "M", global = true, default_value_t = 1000)]
    m: usize,
    /// Maximum k-means iterations.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_ITER)]
    smax: usize,
    /// Output file; a directory for `simulate`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the panel of the first replication to this CSV.
    #[arg(long, global = true)]
    emit_data: Option<PathBuf>,
    #[arg(long, global = true)]
    phi: Option<f64>,
    /// Hypothesis per replication in `simulate`; defaults to a random
    /// covariate for dgp5 and dgp6 and all slopes otherwise.
    #[arg(long, global = true, value_enum)]
    test: Option<TestArg>,
    #[arg(long, global = true, value_enum, default_value_t = CovArg::Pooled)]
    covariance: CovArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ls,
    Gmm,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    All,
    Covariate,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Pooled,
    UnitResidual,
    Cluster,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ls => Method::Ls,
            MethodArg::Gmm => Method::Gmm,
        }
    }
}

impl From<CovArg> for CovarianceKind {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Pooled => CovarianceKind::Pooled,
            CovArg::UnitResidual => CovarianceKind::UnitResidual,
            CovArg::Cluster => CovarianceKind::Cluster,
        }
    }
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected k,k', got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_dgp(s: &str) -> std::result::Result<DgpId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = diagnostic(&e);
            eprintln!("{}", serde_json::to_string(&payload).expect("diagnostic serialises"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let o = &cli.opts;
    if !(o.alpha > 0.0 && o.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", o.alpha)));
    }
    match cli.command {
        Command::Fit => cmd_fit(o),
        Command::Test => cmd_test(o),
        Command::Simulate => cmd_simulate(o),
        Command::Perturb => cmd_perturb(o),
        Command::Qq => cmd_qq(o),
    }
}

fn broken_pipe(e: &Error) -> bool {
    match e {
        Error::Io(io) => io.kind() == io::ErrorKind::BrokenPipe,
        Error::Json(j) => j.io_error_kind() == Some(io::ErrorKind::BrokenPipe),
        _ => false,
    }
}

fn diagnostic(e: &Error) -> Value {
    let debug = format!("{e:?}");
    let kind = debug.split([' ', '(', '{']).next().unwrap_or_default().to_string();
    let mut v = json!({ "error": kind, "message": e.to_string(), "exit_code": e.exit_code() });
    match e {
        Error::ObservedStatExcluded { stat, iteration, unit, group } => {
            v["details"] = json!({ "statistic": stat, "iteration": iteration, "unit": unit, "group": group });
        }
        Error::DegenerateDirection { norm } => v["details"] = json!({ "norm": norm }),
        Error::StatOutsideSupport { stat } => v["details"] = json!({ "statistic": stat }),
        _ => {}
    }
    v
}

fn require<T: Copy>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("{flag} is required")))
}

fn load(o: &Opts) -> Result<PanelDataset> {
    let path = o.input.as_ref().ok_or_else(|| Error::InvalidArgument("--input is required".into()))?;
    load_panel(BufReader::new(File::open(path)?), None)
}

fn estimator(m: MethodArg) -> Estimator {
    match m {
        MethodArg::Ls => Estimator::Ls,
        MethodArg::Gmm => Estimator::Gmm(GmmWeight::TwoStage),
    }
}

fn cluster(o: &Opts, data: &PanelDataset) -> Result<ClusterRun> {
    let k = require(o.k, "--K")?;
    let fits = fit_individuals(data, estimator(o.method))?;
    run_kmeans_with(&fits, k, o.seed, o.smax, o.covariance.into())
}

fn zero_based_pair(o: &Opts, k: usize) -> Result<(usize, usize)> {
    let (a, b) = o.pair;
    if a == 0 || b == 0 || a > k || b > k || a == b {
        return Err(Error::InvalidPair {
            k: a,
            k_prime: b,
            reason: format!("groups are 1-based, distinct and at most K = {k}"),
        });
    }
    Ok((a - 1, b - 1))
}

fn target(o: &Opts) -> Result<Target> {
    match o.covariate {
        None => Ok(Target::All),
        Some(0) => Err(Error::InvalidArgument("--covariate is 1-based".into())),
        Some(j) => Ok(Target::Covariate(j - 1)),
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_rows(header: &[String], rows: &[Vec<String>], out: Option<&Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(io::Error::other(e))
}

#[derive(Serialize)]
struct FitOutput {
    method: &'static str,
    n: usize,
    t: usize,
    p: usize,
    units: Vec<String>,
    regressors: Vec<String>,
    #[serde(flatten)]
    run: ClusterRunRecord,
}

fn cmd_fit(o: &Opts) -> Result<()> {
    let data = load(o)?;
    let run = cluster(o, &data)?;
    let record = ClusterRunRecord::from(&run);
    if o.format == Format::Csv {
        let rows: Vec<Vec<String>> = data
            .units()
            .iter()
            .zip(&record.labels)
            .map(|(u, g)| vec![u.clone(), g.to_string()])
            .collect();
        return write_rows(&["unit".into(), "group".into()], &rows, o.out.as_deref());
    }
    let output = FitOutput {
        method: estimator(o.method).name(),
        n: data.n(),
        t: data.t(),
        p: data.p(),
        units: data.units().to_vec(),
        regressors: data.regressor_names().to_vec(),
        run: record,
    };
    write_json(&output, o.out.as_deref())
}

fn cmd_test(o: &Opts) -> Result<()> {
    let data = load(o)?;
    let run = cluster(o, &data)?;
    let (k, kp) = zero_based_pair(o, run.k)?;
    let result = selective_test_with(&run, k, kp, target(o)?, &run.estimates.sigma, o.method.into())?;
    let record = SelectiveTestRecord::from(&result);
    if o.format == Format::Csv {
        let header = ["k", "k_prime", "target", "statistic", "p_selective", "p_naive", "wald_stat"];
        let row = vec![
            record.pair.0.to_string(),
            record.pair.1.to_string(),
            record.metadata.target.clone(),
            record.statistic.to_string(),
            record.p_selective.to_string(),
            record.p_naive.to_string(),
            record.wald_stat.to_string(),
        ];
        return write_rows(&header.map(String::from), &[row], o.out.as_deref());
    }
    let mut v = serde_json::to_value(&record)?;
    v["reject"] = json!(record.p_selective <= o.alpha);
    write_json(&v, o.out.as_deref())
}

fn cmd_simulate(o: &Opts) -> Result<()> {
    let id = require(o.dgp, "--dgp")?;
    let mut spec = DgpSpec::new(id, o.n, o.t, o.delta, o.seed).with_kappa(o.kappa);
    if let Some(p) = o.p {
        spec.p = p;
    }
    spec.validate()?;
    let test = match o.test {
        Some(TestArg::All) => TestKind::All,
        Some(TestArg::Covariate) => TestKind::RandomCovariate,
        None if matches!(id, DgpId::Dgp5 | DgpId::Dgp6) => TestKind::RandomCovariate,
        None => TestKind::All,
    };
    let config = ExperimentConfig::new(spec, o.k.unwrap_or(3), o.m, o.method.into())
        .with_test(test)
        .with_alpha(o.alpha)
        .with_max_iter(o.smax)
        .with_covariance(o.covariance.into());
    if let Some(path) = &o.emit_data {
        dgp_generate(&spec)?.data.write_csv(File::create(path)?)?;
    }
    let report = if spec.delta == 0.0 && spec.kappa == 0.0 {
        run_size_experiment(config)?
    } else {
        run_power_experiment(config)?
    };
    match &o.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            report.write_csv(File::create(dir.join("replications.csv"))?)?;
            write_json(&report.summary_json(), Some(&dir.join("summary.json")))?;
            write_json(&report.summary_json(), None)
        }
        None if o.format == Format::Csv => report.write_csv(io::stdout().lock()),
        None => write_json(&full_report(&report)?, None),
    }
}

fn full_report(report: &ExperimentReport) -> Result<Value> {
    let mut v = report.summary_json();
    v["replications"] = serde_json::to_value(&report.replications)?;
    Ok(v)
}

fn cmd_perturb(o: &Opts) -> Result<()> {
    let data = load(o)?;
    let run = cluster(o, &data)?;
    let (k, kp) = zero_based_pair(o, run.k)?;
    let contrast = build_contrast(&run, k, kp)?;
    let path = contrast.path(&run.stacked_betas(), target(o)?)?;
    let phi = o.phi.unwrap_or(path.statistic);
    if !(phi >= 0.0 && phi.is_finite()) {
        return Err(Error::InvalidArgument(format!("phi must be finite and non-negative, got {phi}")));
    }
    let blocks = path.blocks_at(phi);
    let replay = run.replay(&blocks);
    let same = matches!(&replay, Ok(t) if t.same_event(&run.trajectory));
    let labels = replay.ok().map(|t| t.final_labels().iter().map(|g| g + 1).collect::<Vec<_>>());
    let set = truncation_set(&run, &path)?;
    if o.format == Format::Csv {
        let mut header = vec!["unit".to_string()];
        header.extend(data.regressor_names().iter().cloned());
        let rows: Vec<Vec<String>> = data
            .units()
            .iter()
            .zip(&blocks)
            .map(|(u, b)| std::iter::once(u.clone()).chain(b.iter().map(f64::to_string)).collect())
            .collect();
        return write_rows(&header, &rows, o.out.as_deref());
    }
    let output = json!({
        "pair": [k + 1, kp + 1],
        "phi": phi,
        "statistic": path.statistic,
        "units": data.units(),
        "blocks": blocks.iter().map(|b| b.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "same_clustering": same,
        "in_truncation_set": set.contains(phi),
        "labels": labels,
        "truncation": set,
    });
    write_json(&output, o.out.as_deref())
}

fn cmd_qq(o: &Opts) -> Result<()> {
    let path = o.input.as_ref().ok_or_else(|| Error::InvalidArgument("--input is required".into()))?;
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = headers
        .iter()
        .position(|h| h == "p_selective")
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no p_selective column", path.display())))?;
    let mut pvalues = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let cell = rec.get(col).unwrap_or_default();
        if cell.is_empty() {
            continue;
        }
        let p: f64 = cell.parse().map_err(|_| Error::Parse {
            line: i + 2,
            message: format!("p_selective '{cell}' is not a number"),
        })?;
        pvalues.push(p);
    }
    let points = qq_data(&pvalues)?;
    if o.format == Format::Csv {
        let rows: Vec<Vec<String>> = points.iter().map(|(u, p)| vec![u.to_string(), p.to_string()]).collect();
        return write_rows(&["uniform".into(), "pvalue".into()], &rows, o.out.as_deref());
    }
    let output = json!({
        "m": pvalues.len(),
        "ks_stat": ks_stat(&pvalues),
        "points": points.iter().map(|(u, p)| json!({ "uniform": u, "pvalue": p })).collect::<Vec<_>>(),
    });
    write_json(&output, o.out.as_deref())
}
