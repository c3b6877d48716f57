//! Command-line interface: `simulate`, `estimate`, `coverage`, `sweep`,
//! `corner-case` and `compare`.
//!
//! Errors go to standard error as `error: <message>`. Exit codes: 0 success,
//! 2 input or configuration error, 3 data-invariant violation, 4 numerical
//! failure.

pub mod config;
pub mod io;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::core_types::{EstimateReport, EstimatorKind};
use crate::error::{Error, Result};
use crate::estimators::{HybridWeight, OlsCovariance};
use crate::experiments::{
    corner_case_plan, corner_case_study, coverage_experiment, simulate_replicate, sweep, CoverageResult,
    EstimatorSpec, ExperimentPlan, SweepPoint,
};
use crate::inference::{compare_policies, evaluate, Centering, EvalOptions, KChoice};
use crate::simulators::BoostCenter;

pub use config::RunConfig;

/// Environment variable overriding the default worker count.
pub const WORKERS_ENV: &str = "POLICY_EVAL_WORKERS";

/// Significant digits of emitted JSON numbers.
pub const JSON_DIGITS: usize = 9;

#[derive(Debug, Parser)]
#[command(name = "policy-eval", version, about = "Evaluate index-based allocation policies from RCT data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate trials and write one dataset CSV per replicate.
    Simulate(SimulateArgs),
    /// Estimate effects from a dataset CSV; prints one JSON object per estimator.
    Estimate(EstimateArgs),
    /// Coverage experiment; writes a CSV table and a JSON plot series.
    Coverage(RunArgs),
    /// Coverage experiment over the `[sweep]` grid of the config.
    Sweep(RunArgs),
    /// Corner-case study with a boost at the treatment boundary.
    CornerCase(CornerArgs),
    /// Difference of two estimate reports with its confidence interval.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of datasets; overrides `replicates`.
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenteringArg {
    GroupMean,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OlsArg {
    Classical,
    Hc0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterArg {
    IndexQuantile,
    LiteralAlpha,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `kind` or `kind:variance`, repeatable. Defaults to base and subgroup.
    #[arg(long = "estimator", value_parser = parse_spec)]
    pub estimators: Vec<EstimatorSpec>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Use only the first T reward steps.
    #[arg(long)]
    pub truncate: Option<usize>,
    /// Evaluate the first R allocation rounds.
    #[arg(long)]
    pub upto_round: Option<usize>,
    /// Hybrid weight, `auto` or a number.
    #[arg(long, default_value = "auto")]
    pub weight: String,
    /// Order-statistic window, `auto` or an integer.
    #[arg(long, default_value = "auto")]
    pub k: String,
    #[arg(long, value_enum, default_value_t = CenteringArg::GroupMean)]
    pub centering: CenteringArg,
    #[arg(long, value_enum, default_value_t = OlsArg::Classical)]
    pub ols_covariance: OlsArg,
    /// Treatment fraction; inferred from the round-1 count when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Emit floats at full precision instead of 9 significant digits.
    #[arg(long)]
    pub full_precision: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Coverage CSV; overrides `output.csv`. Standard output when unset.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Plot-series JSON; overrides `output.json`.
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// 5000 agents per arm and 1000 replicates.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Args)]
pub struct CornerArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CenterArg::IndexQuantile)]
    pub center: CenterArg,
    #[arg(long, default_value = "auto")]
    pub k: String,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report JSON of the first policy.
    pub first: PathBuf,
    /// Report JSON of the second policy.
    pub second: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

fn parse_spec(s: &str) -> std::result::Result<EstimatorSpec, String> {
    EstimatorSpec::parse(s).map_err(|e| e.to_string())
}

fn parse_k(s: &str) -> Result<KChoice> {
    match s {
        "auto" => Ok(KChoice::Auto),
        _ => s.parse().map(KChoice::Fixed).map_err(|_| Error::Config(format!("k must be `auto` or an integer, got `{s}`"))),
    }
}

fn parse_weight(s: &str) -> Result<HybridWeight> {
    match s {
        "auto" => Ok(HybridWeight::Auto),
        _ => s
            .parse()
            .map(HybridWeight::Fixed)
            .map_err(|_| Error::Config(format!("weight must be `auto` or a number, got `{s}`"))),
    }
}

fn env_workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(Error::from)
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let mut plan = cfg.to_plan()?;
    if let Some(r) = args.replicates {
        plan.replicates = r;
    }
    plan.workers = plan.workers.or(env_workers()?);
    plan.validate()?;
    let dir = args.out_dir.clone().or(cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for r in 0..plan.replicates as u64 {
        let path = dir.join(format!("dataset_{r:04}.csv"));
        io::write_dataset_file(&simulate_replicate(&plan, r)?, &path)?;
        emit(out, &path.display().to_string())?;
    }
    Ok(())
}

/// Reports for the `estimate` command.
pub fn estimate_reports(args: &EstimateArgs) -> Result<Vec<EstimateReport>> {
    let data = io::read_dataset_file(&args.data, args.alpha)?;
    let opts = EvalOptions {
        level: args.level,
        truncate_at: args.truncate,
        upto_round: args.upto_round,
        k: parse_k(&args.k)?,
        centering: match args.centering {
            CenteringArg::GroupMean => Centering::GroupMean,
            CenteringArg::Literal => Centering::Literal,
        },
        hybrid_weight: parse_weight(&args.weight)?,
        ols_covariance: match args.ols_covariance {
            OlsArg::Classical => OlsCovariance::Classical,
            OlsArg::Hc0 => OlsCovariance::Hc0,
        },
    };
    let specs = if args.estimators.is_empty() {
        vec![EstimatorSpec::new(EstimatorKind::Base), EstimatorSpec::new(EstimatorKind::Subgroup)]
    } else {
        args.estimators.clone()
    };
    specs.iter().map(|s| evaluate(&data, s.kind, s.variance, &opts)).collect()
}

fn cmd_estimate(args: &EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let digits = if args.full_precision { None } else { Some(JSON_DIGITS) };
    for rep in estimate_reports(args)? {
        emit(out, &io::to_json(&rep, digits)?)?;
    }
    Ok(())
}

const COVERAGE_COLUMNS: [&str; 7] = ["estimator", "below", "covered", "above", "mean_half_width", "estimand", "replicates"];

fn coverage_rows(res: &CoverageResult, prefix: &[String], w: &mut csv::Writer<Vec<u8>>) -> Result<()> {
    for row in &res.rows {
        let s = &row.summary;
        let mut rec = prefix.to_vec();
        rec.extend([
            row.estimator.to_string(),
            s.below.to_string(),
            s.covered.to_string(),
            s.above.to_string(),
            s.mean_half_width.to_string(),
            s.estimand.to_string(),
            s.replicates.to_string(),
        ]);
        w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    Ok(())
}

/// Coverage table, one row per estimator.
pub fn coverage_csv(res: &CoverageResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COVERAGE_COLUMNS).map_err(|e| Error::Io(e.to_string()))?;
    coverage_rows(res, &[], &mut w)?;
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
}

/// Sweep table, one row per grid value and estimator.
pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = ["axis", "value"].into_iter().chain(COVERAGE_COLUMNS).collect();
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for p in points {
        coverage_rows(&p.result, &[p.axis.as_str().to_string(), p.value.to_string()], &mut w)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
}

#[derive(Debug, Serialize)]
struct Series {
    estimator: String,
    x: Vec<f64>,
    covered: Vec<f64>,
    below: Vec<f64>,
    above: Vec<f64>,
    mean_half_width: Vec<f64>,
    estimand: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SweepPlot {
    axis: &'static str,
    series: Vec<Series>,
}

fn sweep_plot(points: &[SweepPoint]) -> SweepPlot {
    let labels: Vec<String> =
        points.first().map(|p| p.result.rows.iter().map(|r| r.estimator.to_string()).collect()).unwrap_or_default();
    let series = labels
        .iter()
        .enumerate()
        .map(|(e, label)| {
            let pick = |f: &dyn Fn(&crate::core_types::CoverageSummary) -> f64| {
                points.iter().map(|p| f(&p.result.rows[e].summary)).collect()
            };
            Series {
                estimator: label.clone(),
                x: points.iter().map(|p| p.value).collect(),
                covered: pick(&|s| s.covered),
                below: pick(&|s| s.below),
                above: pick(&|s| s.above),
                mean_half_width: pick(&|s| s.mean_half_width),
                estimand: pick(&|s| s.estimand),
            }
        })
        .collect();
    SweepPlot { axis: points.first().map_or("", |p| p.axis.as_str()), series }
}

fn run_plan(args: &RunArgs) -> Result<(ExperimentPlan, RunConfig)> {
    let cfg = RunConfig::load(&args.config)?;
    let mut plan = cfg.to_plan()?;
    if args.paper_scale {
        let paper = ExperimentPlan::paper_scale();
        plan.simulator.n = paper.simulator.n;
        plan.replicates = paper.replicates;
    }
    plan.workers = args.workers.or(plan.workers).or(env_workers()?);
    plan.validate()?;
    Ok((plan, cfg))
}

fn finish(args: &RunArgs, cfg: &RunConfig, table: String, plot: String, out: &mut dyn Write) -> Result<()> {
    match args.out_csv.as_ref().or(cfg.output.csv.as_ref()) {
        Some(p) => write_file(p, &table)?,
        None => write!(out, "{table}")?,
    }
    if let Some(p) = args.out_json.as_ref().or(cfg.output.json.as_ref()) {
        write_file(p, &plot)?;
    }
    Ok(())
}

fn cmd_coverage(args: &RunArgs, require_sweep: bool, out: &mut dyn Write) -> Result<()> {
    let (plan, cfg) = run_plan(args)?;
    if plan.sweep.is_some() {
        let points = sweep(&plan)?;
        return finish(args, &cfg, sweep_csv(&points)?, io::to_json(&sweep_plot(&points), Some(JSON_DIGITS))?, out);
    }
    if require_sweep {
        return Err(Error::Config("the sweep command needs a [sweep] section".into()));
    }
    let res = coverage_experiment(&plan)?;
    finish(args, &cfg, coverage_csv(&res)?, io::to_json(&res, Some(JSON_DIGITS))?, out)
}

fn cmd_corner(args: &CornerArgs, out: &mut dyn Write) -> Result<()> {
    let mut plan = corner_case_plan(args.n, args.alpha, args.sigma, args.replicates, args.seed);
    plan.simulator.boost_center = match args.center {
        CenterArg::IndexQuantile => BoostCenter::IndexQuantile,
        CenterArg::LiteralAlpha => BoostCenter::LiteralAlpha,
    };
    plan.k = parse_k(&args.k)?;
    plan.workers = args.workers.or(env_workers()?);
    let res = corner_case_study(&plan)?;
    if let Some(p) = &args.out_csv {
        write_file(p, &coverage_csv(&res)?)?;
    }
    emit(out, &io::to_json(&res, Some(JSON_DIGITS))?)
}

fn read_report(path: &Path) -> Result<EstimateReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(text.trim()).map_err(|e| Error::Parse { line: e.line(), msg: format!("{}: {e}", path.display()) })
}

#[derive(Debug, Serialize)]
struct Comparison {
    difference: f64,
    ci_low: f64,
    ci_high: f64,
    level: f64,
}

fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let (a, b) = (read_report(&args.first)?, read_report(&args.second)?);
    let (lo, hi) = compare_policies(&a, &b, args.level)?;
    let c = Comparison { difference: a.point - b.point, ci_low: lo, ci_high: hi, level: args.level };
    emit(out, &io::to_json(&c, Some(JSON_DIGITS))?)
}

/// Runs one parsed command, writing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Coverage(a) => cmd_coverage(a, false, out),
        Command::Sweep(a) => cmd_coverage(a, true, out),
        Command::CornerCase(a) => cmd_corner(a, out),
        Command::Compare(a) => cmd_compare(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
