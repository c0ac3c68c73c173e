//! `clinloop`: cohorts, sweeps, replay, calibration, the HTTP service and
//! the end-to-end validator.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error,
//! 3 cell failure, 4 I/O or transport failure.

mod overrides;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use clinloop_core::calibration::PipelineConfig;
use clinloop_core::cohort::{generate_cohort, load_predictions, write_predictions, Case, CohortError, GeneratorConfig};
use clinloop_core::controller::{replay, Cohort, ControllerConfig, ControllerError};
use clinloop_core::record::{read_log, LogError, LogWriter, ReadMode};
use clinloop_core::report::{build_report, ReportError, ReportOptions};
use clinloop_core::sweep::{list_cells, read_manifest, run_sweep, SweepConfig, SweepError};
use clinloop_core::Controller;
use clinloop_validator::{validate_all_cells, validate_friction, validate_schema, Client, ValidationSummary, ValidatorError};

use overrides::{apply_overrides, merge_toml};

#[derive(Debug, Parser)]
#[command(name = "clinloop", version, about = "Clinician-in-the-loop decision simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the 48 cell ids in canonical order.
    Cells,
    /// Generate a synthetic cohort as a prediction table.
    Generate(GenerateArgs),
    /// Run the factorial sweep.
    Sweep(SweepArgs),
    /// Serve the decision API over HTTP.
    Serve(ServeArgs),
    /// Verify a decision log and rebuild the report tables from it.
    Replay(ReplayArgs),
    /// Calibrate the model probabilities found in a log.
    Calibrate(CalibrateArgs),
    /// Check parity, friction and log schema against a service.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct CohortSource {
    /// Prediction table (CSV) to load instead of generating a cohort.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Size of the generated cohort.
    #[arg(long, default_value_t = 10_000)]
    n_cases: usize,
    /// Seed of the generated cohort.
    #[arg(long)]
    cohort_seed: Option<u64>,
}

impl CohortSource {
    fn load(&self) -> Result<Vec<Case>> {
        match &self.cohort {
            Some(path) => Ok(load_predictions(path)?),
            None => {
                let mut cfg = GeneratorConfig {
                    n_cases: self.n_cases,
                    ..GeneratorConfig::default()
                };
                if let Some(s) = self.cohort_seed {
                    cfg.seed = s;
                }
                Ok(generate_cohort(&cfg)?)
            }
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<String>,
    /// Generator field override, e.g. `error_model.dep_up=0.2`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-run the configuration recorded in a previous manifest.
    #[arg(long, conflicts_with = "config")]
    from_manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_per_cell: Option<usize>,
    #[arg(long)]
    cohort_file: Option<PathBuf>,
    #[arg(long)]
    per_cell_cohort: bool,
    /// Explicit cell subset (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    cells: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Any config field, e.g. `policies.safety.b_up=0.1`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[command(flatten)]
    cohort: CohortSource,
    /// Decision log to append to.
    #[arg(long, default_value = "decisions.jsonl")]
    log: PathBuf,
    /// TOML controller config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any controller config field. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Cohort table, needed for the confusion and calibration tables.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Directory for the rebuilt report tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip malformed lines instead of stopping at the first one.
    #[arg(long)]
    salvage: bool,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, default_value_t = 0.30)]
    fit_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Directory for the calibration tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Base URL of a running service; one is started in-process when omitted.
    #[arg(long)]
    url: Option<String>,
    #[command(flatten)]
    cohort: CohortSource,
    /// Controller config shared by both sides of the parity check.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20_251_015)]
    seed: u64,
    /// Cases per cell for the parity check.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Scripted decisions for the friction check.
    #[arg(long, default_value_t = 50)]
    friction_n: usize,
    /// Log to check; the in-process service's log when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Structured report file.
    #[arg(long, default_value = "validation.json")]
    report: PathBuf,
}

fn read_toml<T: Serialize + serde::de::DeserializeOwned + Default>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    merge_toml(T::default(), &text).with_context(|| path.display().to_string())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = GeneratorConfig {
        n_cases: a.n,
        ..GeneratorConfig::default()
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.dataset {
        cfg.dataset = d;
    }
    let cfg = apply_overrides(cfg, &a.set)?;
    let cases = generate_cohort(&cfg)?;
    match a.out {
        Some(path) => {
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_predictions(BufWriter::new(f), &cases)?;
        }
        None => write_predictions(std::io::stdout().lock(), &cases)?,
    }
    Ok(())
}

fn sweep_config(a: &SweepArgs) -> Result<SweepConfig> {
    let mut cfg = match (&a.config, &a.from_manifest) {
        (Some(p), _) => read_toml(p)?,
        (_, Some(p)) => read_manifest(p)?.config,
        _ => SweepConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.global_seed = s;
    }
    if let Some(n) = a.n_per_cell {
        cfg.n_per_cell = n;
    }
    if let Some(f) = &a.cohort_file {
        cfg.cohort_file = Some(f.clone());
    }
    if a.per_cell_cohort {
        cfg.per_cell_cohort = true;
    }
    if !a.cells.is_empty() {
        cfg.cells = Some(a.cells.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    let cfg = apply_overrides(cfg, &a.set)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    total_records: usize,
    cells: usize,
    manifest: &'a Path,
    log: &'a Path,
    report_dir: &'a Path,
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = sweep_config(&a)?;
    let out = run_sweep(&cfg)?;
    print_json(&SweepSummary {
        total_records: out.manifest.total_records,
        cells: out.manifest.cells.len(),
        manifest: &out.manifest_path,
        log: &out.log_path,
        report_dir: &out.report_dir,
    })
}

fn controller_config(path: Option<&Path>, seed: Option<u64>, set: &[String]) -> Result<ControllerConfig> {
    let mut cfg: ControllerConfig = match path {
        Some(p) => read_toml(p)?,
        None => ControllerConfig::default(),
    };
    if let Some(s) = seed {
        cfg.global_seed = s;
    }
    let cfg: ControllerConfig = apply_overrides(cfg, set)?;
    cfg.policies.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let cfg = controller_config(a.config.as_deref(), a.seed, &a.set)?;
    let cohort = Arc::new(Cohort::new(a.cohort.load()?)?);
    let log = LogWriter::open(&a.log)?;
    let ctl = Arc::new(Controller::new(cohort, cfg, Some(log))?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        tracing::info!(addr = %listener.local_addr()?, log = %a.log.display(), "serving");
        clinloop_server::serve(listener, ctl, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

#[derive(Serialize)]
struct ReplaySummary<'a> {
    records: usize,
    parse_errors: &'a [(usize, String)],
    mismatches: &'a [clinloop_core::controller::Mismatch],
    passed: bool,
}

fn cmd_replay(a: ReplayArgs) -> Result<bool> {
    let mode = if a.salvage { ReadMode::Salvage } else { ReadMode::Strict };
    let log = read_log(&a.log, mode)?;
    let cases = a.cohort.as_deref().map(load_predictions).transpose()?;
    let outcome = replay(&log, cases.as_deref(), &ReportOptions::default())?;
    if let Some(dir) = &a.out {
        outcome.report.export(dir)?;
    }
    let passed = outcome.mismatches.is_empty() && outcome.parse_errors.is_empty();
    print_json(&ReplaySummary {
        records: outcome.records,
        parse_errors: &outcome.parse_errors,
        mismatches: &outcome.mismatches,
        passed,
    })?;
    Ok(passed)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let log = read_log(&a.log, ReadMode::Strict)?;
    let cases = load_predictions(&a.cohort)?;
    let opts = ReportOptions {
        calibration: PipelineConfig {
            fit_fraction: a.fit_fraction,
            seed: a.seed,
            n_bins: a.bins,
            ..PipelineConfig::default()
        },
        ..ReportOptions::default()
    };
    if log.records.is_empty() {
        bail!(Failure::config(format!("{} holds no records", a.log.display())));
    }
    let report = build_report(&log.records, Some(&cases), &opts)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for t in ["calibration_summary", "calibration_curve"] {
            let path = dir.join(format!("{t}.csv"));
            std::fs::write(&path, report.table_csv(t)?).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    print!("{}", report.table_csv("calibration_summary")?);
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<bool> {
    let cfg = controller_config(a.config.as_deref(), None, &[])?;
    let cases = a.cohort.load()?;
    if a.n > cases.len() || a.friction_n > cases.len() {
        bail!(Failure::config(format!(
            "cohort has {} cases; n = {} and friction_n = {} must not exceed it",
            cases.len(),
            a.n,
            a.friction_n
        )));
    }
    let tmp;
    let (server, own_log) = match &a.url {
        Some(_) => (None, None),
        None => {
            tmp = std::env::temp_dir().join(format!("clinloop-validate-{}.jsonl", std::process::id()));
            let _ = std::fs::remove_file(&tmp);
            let ctl = Controller::new(Arc::new(Cohort::new(cases.clone())?), cfg.clone(), Some(LogWriter::open(&tmp)?))?;
            let handle = clinloop_server::spawn(Arc::new(ctl), "127.0.0.1:0".parse()?)?;
            (Some(handle), Some(tmp.clone()))
        }
    };
    let base = a.url.clone().unwrap_or_else(|| server.as_ref().expect("started above").base_url());
    let client = Client::new(&base);
    client.health()?;
    let parity = validate_all_cells(&client, &cases, &cfg, a.seed, a.n)?;
    let friction = validate_friction(&client, &cases, a.seed, a.friction_n)?;
    let schema = match a.log.as_ref().or(own_log.as_ref()) {
        Some(p) => Some(validate_schema(p)?),
        None => None,
    };
    drop(server);
    if let Some(p) = own_log {
        let _ = std::fs::remove_file(p);
    }
    let summary = ValidationSummary::new(parity, schema, Some(friction));
    summary.write_json(&a.report)?;
    let failed_cells = summary.parity.iter().filter(|p| !p.passed).count();
    eprintln!(
        "{}: parity {}/{} cells, friction {}, schema {}; report at {}",
        if summary.passed { "PASS" } else { "FAIL" },
        summary.parity.len() - failed_cells,
        summary.parity.len(),
        summary.friction.as_ref().is_some_and(|f| f.passed),
        summary
            .schema
            .as_ref()
            .map_or("skipped".to_string(), |s| format!("{} violations", s.violations.len())),
        a.report.display()
    );
    Ok(summary.passed)
}

/// An error that carries its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<SweepError>() {
            return match e {
                SweepError::Config(_) => 2,
                SweepError::Cell { .. } => 3,
                SweepError::Cohort(CohortError::Io { .. }) | SweepError::Io { .. } | SweepError::Log(LogError::Io { .. }) => 4,
                SweepError::Cohort(_) => 2,
                SweepError::Log(_) | SweepError::Report(_) => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<CohortError>() {
            return if matches!(e, CohortError::Io { .. }) { 4 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<ControllerError>() {
            return match e {
                ControllerError::Log(_) => 4,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<ValidatorError>() {
            return match e {
                ValidatorError::Setup(_) => 2,
                _ => 4,
            };
        }
        if cause.is::<LogError>() || cause.is::<std::io::Error>() || cause.is::<ReportError>() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cells => {
            for c in list_cells() {
                println!("{c}");
            }
            Ok(true)
        }
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Serve(a) => cmd_serve(a).map(|_| true),
        Command::Replay(a) => cmd_replay(a),
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
