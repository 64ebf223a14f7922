//! Command-line front end. Every subcommand reads an optional JSON config,
//! echoes the resolved config to the output directory and writes its results
//! there as JSON and CSV. Stdout carries only a short human summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::apps::{self, mollify::MollifyConfig, pde::PdeConfig, penalty::PenaltyConfig, sieve::SieveConfig, trace_csv, AppOutcome};
use crate::battery::{run_suite, SuiteReport};
use crate::envelope::{pasch_hausdorff, EnvelopeError, EnvelopeResult};
use crate::epi::{
    epi_convergence_expectations, epi_convergence_weak, fatou_weak, parametric_fatou_envelope_route,
    ApproximationScheme,
};
use crate::extreal::ExtReal;
use crate::report::{DiagnosticReport, StageKind, Verdict};
use crate::space::MetricGrid;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "epikit", version, about = "Epi-convergence diagnostics for expectation functions on finite grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file. Omitted fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "epikit_out")]
    pub out: PathBuf,
    /// Overrides the seed of randomized runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the schedule tolerance of scheme checks.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Inf-convolution envelopes of one grid function.
    Envelope,
    /// Fatou-type lower bound for an approximation scheme.
    FatouCheck,
    /// Epi-convergence of the expectation functions of a scheme.
    EpiCheck,
    /// One of the bundled applications.
    App {
        #[arg(value_enum)]
        app: AppName,
    },
    /// Full acceptance battery.
    Suite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AppName {
    Sieve,
    Mollify,
    Pde,
    Penalty,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// `pointer` is a JSON pointer into the config file.
    #[error("invalid config at \"{pointer}\": {message}")]
    Config { pointer: String, message: String },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn config(pointer: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config { pointer: pointer.into(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub grid: MetricGrid,
    pub values: Vec<ExtReal>,
    #[serde(default = "default_kappa")]
    pub kappa: Vec<f64>,
}

fn default_kappa() -> Vec<f64> {
    (0..=10).map(|j| f64::powi(2.0, j)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Envelope,
    Weak,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FatouConfig {
    pub scheme: ApproximationScheme,
    #[serde(default)]
    pub route: Route,
    /// Decision points to test; all of them when absent.
    #[serde(default)]
    pub points: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpiConfig {
    pub scheme: ApproximationScheme,
    #[serde(default)]
    pub route: Route,
    /// Envelope route: points where the upper bound is tested.
    #[serde(default)]
    pub dense_subset: Option<Vec<usize>>,
    /// Weak route: one recovery path (a grid index per term) per decision point.
    #[serde(default)]
    pub recovery: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
}

/// Parses argv and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
        Ok(cli) => match execute(&cli) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Run(e.to_string()))?;
            pool.install(|| dispatch(cli))
        }
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    if let Some(t) = cli.tol {
        if !(t.is_finite() && t >= 0.0) {
            return Err(CliError::Usage("--tol must be finite and nonnegative".into()));
        }
    }
    match cli.command {
        Command::Envelope => envelope(cli),
        Command::FatouCheck => fatou_check(cli),
        Command::EpiCheck => epi_check(cli),
        Command::App { app } => app_command(cli, app),
        Command::Suite => suite(cli),
    }
}

fn required(cli: &Cli) -> Result<&Path, CliError> {
    cli.config.as_deref().ok_or_else(|| CliError::Usage("this subcommand needs --config".into()))
}

fn envelope(cli: &Cli) -> Result<i32, CliError> {
    let cfg: EnvelopeConfig = load(required(cli)?)?;
    if cli.seed.is_some() || cli.tol.is_some() {
        log::warn!("--seed and --tol do not apply to envelope");
    }
    let mut results = Vec::with_capacity(cfg.kappa.len());
    for (j, &k) in cfg.kappa.iter().enumerate() {
        let r = pasch_hausdorff(&cfg.grid, &cfg.values, k).map_err(|e| match e {
            EnvelopeError::Length { .. } => CliError::config("/values", e),
            EnvelopeError::Modulus(_) => CliError::config(format!("/kappa/{j}"), e),
        })?;
        results.push(r);
    }
    write_outputs(&cli.out, &cfg, &[("envelope.json", to_json(&results)?), ("envelope.csv", envelope_csv(&results))])?;
    println!("envelope: {} moduli on {} points, written to {}", results.len(), cfg.grid.len(), cli.out.display());
    Ok(0)
}

/// Columns `kappa,point,value,attained_at`; `attained_at` is empty when the
/// envelope is infinite there.
pub fn envelope_csv(results: &[EnvelopeResult]) -> String {
    let mut out = String::from("kappa,point,value,attained_at\n");
    for r in results {
        for (i, v) in r.values.iter().enumerate() {
            let at = r.attained_at[i].map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{i},{v},{at}", r.kappa);
        }
    }
    out
}

fn with_tol(scheme: &mut ApproximationScheme, tol: Option<f64>) {
    if let Some(t) = tol {
        let mut s = scheme.schedules();
        s.tol = t;
        scheme.schedules = Some(s);
    }
}

fn check_scheme(scheme: &ApproximationScheme) -> Result<(), CliError> {
    scheme.validate().map_err(|e| CliError::config("/scheme", e))?;
    scheme.schedules().validate().map_err(|e| CliError::config("/scheme/schedules", e))
}

fn run_err(e: impl ToString) -> CliError {
    CliError::Run(e.to_string())
}

fn fatou_check(cli: &Cli) -> Result<i32, CliError> {
    let mut cfg: FatouConfig = load(required(cli)?)?;
    with_tol(&mut cfg.scheme, cli.tol);
    check_scheme(&cfg.scheme)?;
    let points = cfg.points.as_deref();
    let mut parts = Vec::new();
    if cfg.route != Route::Weak {
        parts.push(("envelope", parametric_fatou_envelope_route(&cfg.scheme, points).map_err(run_err)?));
    }
    if cfg.route != Route::Envelope {
        parts.push(("weak", fatou_weak(&cfg.scheme, points).map_err(run_err)?));
    }
    let report = combine("fatou_check", parts, &cfg.scheme, cli.seed);
    finish_scheme(cli, &cfg, &cfg.scheme, report)
}

fn epi_check(cli: &Cli) -> Result<i32, CliError> {
    let mut cfg: EpiConfig = load(required(cli)?)?;
    with_tol(&mut cfg.scheme, cli.tol);
    check_scheme(&cfg.scheme)?;
    let mut parts = Vec::new();
    if cfg.route != Route::Weak {
        let r = epi_convergence_expectations(&cfg.scheme, cfg.dense_subset.as_deref()).map_err(run_err)?;
        parts.push(("envelope", r));
    }
    if cfg.route != Route::Envelope {
        parts.push(("weak", epi_convergence_weak(&cfg.scheme, cfg.recovery.as_deref()).map_err(run_err)?));
    }
    let report = combine("epi_check", parts, &cfg.scheme, cli.seed);
    finish_scheme(cli, &cfg, &cfg.scheme, report)
}

/// A single route's report is returned as is; two routes are merged with
/// prefixed stage names.
fn combine(
    name: &str,
    mut parts: Vec<(&str, DiagnosticReport)>,
    scheme: &ApproximationScheme,
    seed: Option<u64>,
) -> DiagnosticReport {
    let mut report = if parts.len() == 1 {
        parts.pop().unwrap().1
    } else {
        let stages = parts.iter().flat_map(|(p, r)| r.prefixed_stages(p)).collect();
        let mut r = DiagnosticReport::from_stages(name, stages, &scheme.schedules(), scheme.n_terms());
        for (p, part) in &parts {
            r = r.note(format!("{p} route verdict: {}", verdict_str(part.verdict)));
        }
        r
    };
    if let Some(s) = seed {
        report = report.with_seed(s);
    }
    report
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::HypothesisUnverified => "hypothesis_unverified",
    }
}

/// Expected values per term: one row per `nu` (1-based), then the limit.
pub fn expectations_csv(scheme: &ApproximationScheme) -> String {
    let n_x = scheme.x_grid.len();
    let mut out = String::from("nu");
    for x in 0..n_x {
        let _ = write!(out, ",{x}");
    }
    out.push('\n');
    let row = |out: &mut String, label: String, vals: &[ExtReal]| {
        out.push_str(&label);
        for v in vals {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    };
    for (nu, e) in scheme.expectation_seq().iter().enumerate() {
        row(&mut out, (nu + 1).to_string(), e);
    }
    row(&mut out, "limit".into(), &scheme.limit_expectation());
    out
}

fn finish_scheme<C: Serialize>(
    cli: &Cli,
    cfg: &C,
    scheme: &ApproximationScheme,
    report: DiagnosticReport,
) -> Result<i32, CliError> {
    write_outputs(
        &cli.out,
        cfg,
        &[("report.json", to_json(&report)?), ("expectations.csv", expectations_csv(scheme))],
    )?;
    print_report(&report);
    Ok(report.verdict.exit_code())
}

fn print_report(report: &DiagnosticReport) {
    println!("{}: {}", report.name, verdict_str(report.verdict));
    for s in report.stages.iter().filter(|s| !s.passed) {
        if s.kind == StageKind::Info {
            println!("  info stage {} did not hold", s.name);
        } else {
            println!("  failed {:?} stage {}", s.kind, s.name);
        }
    }
}

fn app_command(cli: &Cli, app: AppName) -> Result<i32, CliError> {
    if cli.tol.is_some() {
        log::warn!("--tol does not apply to applications; their tolerances come from their own grids");
    }
    let cfg_path = cli.config.as_deref();
    let (outcome, resolved) = match app {
        AppName::Sieve => {
            let mut cfg: SieveConfig = load_or_default(cfg_path)?;
            if let Some(s) = cli.seed {
                let n = cfg.seeds.len() as u64;
                cfg.seeds = (s..s + n).collect();
            }
            (apps::sieve::run(&cfg), to_value(&cfg)?)
        }
        AppName::Mollify => {
            let cfg: MollifyConfig = load_or_default(cfg_path)?;
            if cli.seed.is_some() {
                log::warn!("the mollifier application is deterministic; --seed is ignored");
            }
            (apps::mollify::run(&cfg), to_value(&cfg)?)
        }
        AppName::Pde => {
            let mut cfg: PdeConfig = load_or_default(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            (apps::pde::run(&cfg), to_value(&cfg)?)
        }
        AppName::Penalty => {
            let mut cfg: PenaltyConfig = load_or_default(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            (apps::penalty::run(&cfg), to_value(&cfg)?)
        }
    };
    let AppOutcome { report, trace, .. } = outcome.map_err(|e| match e {
        apps::AppError::Config(m) => CliError::config("", m),
        other => run_err(other),
    })?;
    write_outputs(&cli.out, &resolved, &[("report.json", to_json(&report)?), ("trace.csv", trace_csv(&trace))])?;
    print_report(&report);
    if let Some(last) = trace.last() {
        if let Some(x) = last.estimate {
            println!("  final term {}: minimizer {x}", last.nu);
        }
    }
    Ok(report.verdict.exit_code())
}

fn suite(cli: &Cli) -> Result<i32, CliError> {
    let mut cfg: SuiteConfig = load_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let report = run_suite(cfg.seed).map_err(run_err)?;
    write_outputs(&cli.out, &cfg, &[("suite.json", to_json(&report)?), ("suite.csv", suite_csv(&report))])?;
    for c in &report.criteria {
        println!("{:>2} {} {} ({} instances, {} failures)", c.id, if c.passed { "PASS" } else { "FAIL" }, c.name, c.instances, c.failures);
    }
    println!("suite: {}", verdict_str(report.verdict));
    Ok(report.verdict.exit_code())
}

/// Columns `id,name,passed,instances,failures`.
pub fn suite_csv(report: &SuiteReport) -> String {
    let mut out = String::from("id,name,passed,instances,failures\n");
    for c in &report.criteria {
        let _ = writeln!(out, "{},{},{},{},{}", c.id, c.name, c.passed, c.instances, c.failures);
    }
    out
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(run_err)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(run_err)?;
    s.push('\n');
    Ok(s)
}

/// Writes `config.json` (the resolved config plus `schema_version`) and the
/// named files.
fn write_outputs<C: Serialize>(dir: &Path, cfg: &C, files: &[(&str, String)]) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut echo = match to_value(cfg)? {
        Value::Object(m) => m,
        other => Map::from_iter([("config".to_string(), other)]),
    };
    echo.insert("schema_version".into(), SCHEMA_VERSION.into());
    let config_path = dir.join("config.json");
    fs::write(&config_path, to_json(&echo)?).map_err(io(&config_path))?;
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io(&p))?;
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    path.map_or_else(|| Ok(T::default()), load)
}

/// Reads a config file, checks `schema_version` and deserializes the rest,
/// reporting failures with a JSON pointer.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| CliError::config("", e))?;
    let Value::Object(map) = &mut value else {
        return Err(CliError::config("", "expected a JSON object"));
    };
    if let Some(v) = map.remove("schema_version") {
        match v.as_u64() {
            Some(SCHEMA_VERSION) => {}
            Some(other) => return Err(CliError::config("/schema_version", format!("unsupported version {other}"))),
            None => return Err(CliError::config("/schema_version", "expected an integer")),
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = json_pointer(e.path());
        CliError::config(pointer, e.into_inner())
    })
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}
