//! Command-line front end: `run`, `sweep` and `verify`.
//!
//! Exit codes: 0 all pass/fail checks passed, 1 a check failed, 2 configuration
//! or input error, 3 divergence.

use crate::config::{self, ConfigError, ExperimentConfig};
use crate::phases::Phase;
use crate::plot;
use crate::tracker::{self, RunContext, RunError};
use crate::verify::{self, RunLogs, VerificationReport};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const RELAXED_FILE: &str = "relaxed_ps.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILES: [&str; 3] = ["sharpness_loss.svg", "anorm_sharpness.svg", "r_decomposition.svg"];

#[derive(Debug, Parser)]
#[command(name = "eos-lab", version, about = "Edge-of-stability gradient descent experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration, write logs, report and plots.
    Run { config: PathBuf },
    /// Train every value of the config's sweep axis.
    Sweep { config: PathBuf },
    /// Re-run the checks on an existing trajectory log.
    Verify { csv: PathBuf, config: PathBuf },
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "EOS_LAB_WORKERS")]
    pub workers: Option<usize>,
    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_plots: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if self.no_plots {
            cfg.emit_plots = false;
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(RunError::TwoLayer(_) | RunError::Mlp(_) | RunError::Linalg(_)) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Outcome of one `run` or `verify`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub report: VerificationReport,
    pub diverged: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.diverged {
            EXIT_DIVERGED
        } else if self.report.passed() {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAIL
        }
    }
}

fn write_report_and_plots(dir: &Path, report: &VerificationReport, records: &[tracker::TrajectoryRecord], n: usize, plots: bool) -> Result<(), CliError> {
    write_file(&dir.join(REPORT_FILE), &(report.to_json() + "\n"))?;
    if plots {
        let svgs = [plot::sharpness_loss(records), plot::anorm_sharpness(records), plot::r_decomposition(records, n)];
        for (name, svg) in PLOT_FILES.iter().zip(svgs) {
            write_file(&dir.join(name), &svg)?;
        }
    }
    Ok(())
}

/// Train, then write logs, report and plots into `cfg.output_dir`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let out = tracker::run(&cfg.run)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    tracker::write_trajectory(&dir.join(TRAJECTORY_FILE), &out.records)?;
    tracker::write_diagnostics(&dir.join(DIAGNOSTICS_FILE), &out.diagnostics)?;
    if !out.relaxed.is_empty() {
        tracker::write_relaxed(&dir.join(RELAXED_FILE), &out.relaxed)?;
    }
    let logs = RunLogs { records: &out.records, diagnostics: Some(&out.diagnostics), relaxed: Some(&out.relaxed) };
    let report = verify::verify(cfg, &out.context, &logs);
    write_report_and_plots(&dir, &report, &out.records, out.context.n, cfg.emit_plots)?;
    let diverged = out.diverged || report.diverged;
    Ok(RunOutcome { out_dir: dir, report, diverged })
}

/// Re-check an existing log. Sidecar logs next to `csv` are used when present;
/// the report goes to `cfg.output_dir` when overridden, else next to `csv`.
pub fn cmd_verify(csv: &Path, cfg: &ExperimentConfig, out_override: Option<&Path>) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let log_dir = csv.parent().map(Path::to_path_buf).unwrap_or_default();
    let records = tracker::read_trajectory(csv)?;
    let diag_path = log_dir.join(DIAGNOSTICS_FILE);
    let diagnostics = if diag_path.exists() { Some(tracker::read_diagnostics(&diag_path)?) } else { None };
    let relaxed_path = log_dir.join(RELAXED_FILE);
    let relaxed = if relaxed_path.exists() { Some(tracker::read_relaxed(&relaxed_path)?) } else { None };

    let dir = out_override.map(Path::to_path_buf).unwrap_or(log_dir);
    let mut cfg = cfg.clone();
    cfg.output_dir = dir.clone();
    let ds = cfg.run.data.build(cfg.run.seed).map_err(RunError::from)?;
    let context = RunContext::new(&cfg.run, &ds);
    let logs = RunLogs { records: &records, diagnostics: diagnostics.as_deref(), relaxed: relaxed.as_deref() };
    let report = verify::verify(&cfg, &context, &logs);
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    write_report_and_plots(&dir, &report, &records, context.n, cfg.emit_plots)?;
    let diverged = report.diverged;
    Ok(RunOutcome { out_dir: dir, report, diverged })
}

/// One row of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    pub dir: PathBuf,
    pub exit_code: i32,
    pub diverged: bool,
    pub c2_estimate: Option<f64>,
    pub anomaly_fraction: Option<f64>,
    pub epsilon2: Option<f64>,
    pub cycles: Option<usize>,
    /// Mean per-step sharpness increase over the first Phase-I segment.
    pub ps_rate: Option<f64>,
    pub failed_checks: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub param: String,
    pub entries: Vec<SweepEntry>,
    /// `max c2 / min c2` over sub-runs with a c2 estimate.
    pub c2_spread: Option<f64>,
}

impl SweepSummary {
    /// Worst exit code over the sub-runs.
    pub fn exit_code(&self) -> i32 {
        self.entries.iter().map(|e| e.exit_code).max().unwrap_or(EXIT_PASS)
    }
}

/// Sharpness growth rate over the first Phase-I segment of a report.
pub fn ps_rate(report: &VerificationReport, records: &[tracker::TrajectoryRecord]) -> Option<f64> {
    let seg = report.segments.iter().find(|s| s.phase == Phase::I)?;
    let at = |t: usize| records.iter().find(|r| r.t == t).map(|r| r.lambda1);
    let (a, b) = (at(seg.start)?, at(seg.end)?);
    (seg.end > seg.start).then(|| (b - a) / (seg.end - seg.start) as f64)
}

fn sweep_value_name(param: &str, value: &str) -> String {
    let clean: String = value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    format!("{param}_{clean}")
}

/// Run every sweep value on a pool of `workers` threads (all cores when `None`).
pub fn cmd_sweep(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<SweepSummary, CliError> {
    cfg.validate()?;
    let axis = cfg.sweep.clone().ok_or_else(|| ConfigError::Invalid("sweep requires a [sweep] section".into()))?;
    let subs: Vec<(String, ExperimentConfig)> = axis
        .values
        .iter()
        .map(|v| {
            let mut sub = cfg.with_override(&axis.param, v)?;
            sub.output_dir = cfg.output_dir.join(sweep_value_name(&axis.param, v));
            Ok((v.clone(), sub))
        })
        .collect::<Result<_, ConfigError>>()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
    let entries: Vec<SweepEntry> = pool.install(|| subs.par_iter().map(|(v, sub)| sweep_one(v, sub)).collect());
    let c2: Vec<f64> = entries.iter().filter_map(|e| e.c2_estimate).collect();
    let c2_spread = (!c2.is_empty()).then(|| c2.iter().copied().fold(f64::NEG_INFINITY, f64::max) / c2.iter().copied().fold(f64::INFINITY, f64::min));
    let summary = SweepSummary { param: axis.param, entries, c2_spread: c2_spread.filter(|v| v.is_finite()) };
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_file(&cfg.output_dir.join(SUMMARY_FILE), &text)?;
    Ok(summary)
}

fn sweep_one(value: &str, cfg: &ExperimentConfig) -> SweepEntry {
    let mut e = SweepEntry {
        value: value.to_string(),
        dir: cfg.output_dir.clone(),
        exit_code: EXIT_PASS,
        diverged: false,
        c2_estimate: None,
        anomaly_fraction: None,
        epsilon2: None,
        cycles: None,
        ps_rate: None,
        failed_checks: vec![],
        error: None,
    };
    match cmd_run(cfg) {
        Ok(o) => {
            e.exit_code = o.exit_code();
            e.diverged = o.diverged;
            e.c2_estimate = o.report.constants.c2_estimate;
            e.anomaly_fraction = o.report.constants.anomaly_fraction;
            e.epsilon2 = o.report.constants.epsilon2;
            e.cycles = Some(o.report.cycle_stats.cycles);
            e.failed_checks = o.report.checks.iter().filter(|c| c.status == verify::Status::Fail).map(|c| c.name.clone()).collect();
            if let Ok(records) = tracker::read_trajectory(&o.out_dir.join(TRAJECTORY_FILE)) {
                e.ps_rate = ps_rate(&o.report, &records);
            }
        }
        Err(err) => {
            e.exit_code = err.exit_code();
            e.diverged = e.exit_code == EXIT_DIVERGED;
            e.error = Some(err.to_string());
        }
    }
    e
}

fn load(path: &Path, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = config::load_config(path)?;
    ov.apply(&mut cfg);
    Ok(cfg)
}

fn print_report(o: &RunOutcome) {
    for c in &o.report.checks {
        println!("{:<18} {:?} ({} violating)", c.name, c.status, c.steps_violating);
    }
    if o.diverged {
        println!("run diverged; partial logs in {}", o.out_dir.display());
    }
}

/// Parse arguments, execute, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let ov = &cli.overrides;
    let result = match &cli.command {
        Command::Run { config } => load(config, ov).and_then(|c| cmd_run(&c)).map(|o| {
            print_report(&o);
            o.exit_code()
        }),
        Command::Verify { csv, config } => load(config, ov).and_then(|c| cmd_verify(csv, &c, ov.out.as_deref())).map(|o| {
            print_report(&o);
            o.exit_code()
        }),
        Command::Sweep { config } => load(config, ov).and_then(|c| cmd_sweep(&c, ov.workers)).map(|s| {
            for e in &s.entries {
                println!("{}={} exit {} c2 {:?} cycles {:?}", s.param, e.value, e.exit_code, e.c2_estimate, e.cycles);
            }
            s.exit_code()
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
