//! `tfm-lab`: runs experiments on the soft second-price mechanisms from a
//! JSON config and writes `report.json` plus CSV tables.
//!
//! Exit status is 0 when a run completes or an audit passes, 2 when an
//! audit fails and 1 on usage, configuration or evaluation errors.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use tfm_core::CMode;

pub use config::{Command, ConfigError, ExperimentConfig, MechanismChoice, Resolved, StudyRow};
pub use output::{Outcome, Status, Table};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "TFM_LAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CModeArg {
    SecondMoment,
    RhoSquared,
}

impl From<CModeArg> for CMode {
    fn from(c: CModeArg) -> Self {
        match c {
            CModeArg::SecondMoment => CMode::SecondMoment,
            CModeArg::RhoSquared => CMode::RhoSquared,
        }
    }
}

/// Mechanism-design laboratory for soft second-price transaction fee
/// mechanisms. Flags override the matching config fields.
#[derive(Debug, Parser)]
#[command(name = "tfm-lab", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("TFM_LAB_BUILD"), ")"))]
pub struct Cli {
    /// What to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory for report.json and tables/.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    /// Explicit normalising constant; overrides --c-mode.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, value_enum)]
    c_mode: Option<CModeArg>,
    /// Audited property, e.g. U-BNIC (or bnic), U-DSIC, 1-SCP, UIR, BF,
    /// NFL, symmetry, monotonicity, competitiveness, conservative-field,
    /// burning.
    #[arg(long)]
    property: Option<String>,
    #[arg(long, value_enum)]
    mechanism: Option<MechanismChoice>,
    /// Comma-separated bid vector for `allocation`.
    #[arg(long, value_delimiter = ',')]
    bids: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Random candidate profiles per h-search oracle.
    #[arg(long)]
    search_budget: Option<usize>,
    /// Absolute bisection tolerance of the h-search.
    #[arg(long)]
    tolerance: Option<f64>,
}

impl Cli {
    /// The config file with the flags applied on top.
    pub fn merged_config(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if cfg.command.is_none() {
            cfg.command = Some(self.command);
        }
        let p = &mut cfg.params;
        p.n = self.n.or(p.n);
        p.k = self.k.or(p.k);
        p.m = self.m.or(p.m);
        p.h = self.h.or(p.h);
        if let Some(mode) = self.c_mode {
            cfg.c_mode = Some(mode.into());
            // a mode given on the command line replaces a constant from the file
            p.c = None;
        }
        p.c = self.c.or(p.c);
        cfg.seed = self.seed.or(cfg.seed);
        cfg.samples = self.samples.or(cfg.samples);
        cfg.output_dir = self.out.clone().or(cfg.output_dir);
        cfg.property = self.property.clone().or(cfg.property);
        cfg.mechanism = self.mechanism.or(cfg.mechanism);
        cfg.bids = self.bids.clone().or(cfg.bids);
        cfg.trials = self.trials.or(cfg.trials);
        cfg.search_budget = self.search_budget.or(cfg.search_budget);
        cfg.tolerance = self.tolerance.or(cfg.tolerance);
        Ok(cfg)
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub status: Status,
    pub report_path: PathBuf,
    pub outcome: Outcome,
}

/// Resolves `cfg`, runs it and writes the outputs under `out`.
pub fn run(cfg: &ExperimentConfig, command: Command, out: &Path) -> anyhow::Result<RunResult> {
    let resolved = Resolved::new(cfg, command)?;
    let outcome = commands::dispatch(&resolved)?;
    let report_path = output::write_outputs(out, command, &resolved.echo(), &outcome)?;
    Ok(RunResult {
        status: outcome.status,
        report_path,
        outcome,
    })
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer (got `{v}`)"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot size the thread pool: {e}"))
}

/// Command-line entry point.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let cfg = match cli.merged_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let out = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("tfm-lab-out"));
    match run(&cfg, cli.command, &out) {
        Ok(r) => {
            println!(
                "{}: {} ({})",
                cli.command.as_str(),
                status_word(r.status),
                r.report_path.display()
            );
            ExitCode::from(r.status.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Inconclusive => "inconclusive",
        Status::Completed => "completed",
    }
}
