//! Command-line front end.
//!
//! Every command reads an optional strict JSON config (`--config`), applies
//! flag overrides, writes `resolved_config.json` next to its outputs and then
//! its own artifacts. Exit codes: 0 success, 1 a check failed, 2 bad input
//! (unknown config key, malformed JSON, bad flag), 3 runtime failure.

mod bench_cmd;
mod dynamics_cmd;
mod landscape_cmd;
mod report_cmd;
mod theory_cmd;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use bench_cmd::BenchRunConfig;
pub use dynamics_cmd::{DynamicsRunConfig, RhoSweep};
pub use landscape_cmd::{GasLandscapeConfig, KlCase};
pub use theory_cmd::TheoryRunConfig;

#[derive(Debug, Parser)]
#[command(name = "jascl", version, about = "Continual-learning mechanism laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; unknown keys are rejected.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suites and write a pass/fail summary.
    ValidateTheory {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: theory_cmd::Overrides,
    },
    /// Error-dynamics trajectories, precision sweeps and heatmaps.
    Dynamics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: dynamics_cmd::Overrides,
    },
    /// KL comparison and adversarial-ratio tables.
    GasLandscape {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: landscape_cmd::Overrides,
    },
    /// Synthetic continual segmentation benchmark.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: bench_cmd::Overrides,
    },
    /// Merge earlier outputs into one summary table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Output directories of earlier runs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Malformed or unknown configuration. Exit 2.
    Input(String),
    /// A named check failed. Exit 1.
    Check(Vec<String>),
    /// Anything else. Exit 3.
    Runtime(crate::Error),
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Config(m) => CliError::Input(m),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "config error: {m}"),
            CliError::Check(names) => write!(f, "check failed: {}", names.join(", ")),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    let common = match command {
        Command::ValidateTheory { common, .. }
        | Command::Dynamics { common, .. }
        | Command::GasLandscape { common, .. }
        | Command::Bench { common, .. }
        | Command::Report { common, .. } => common,
    };
    if let Some(n) = common.jobs {
        if n == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        // Ignore the error when a pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    fs::create_dir_all(&common.out)?;
    match command {
        Command::ValidateTheory { common, overrides } => theory_cmd::run(common, overrides),
        Command::Dynamics { common, overrides } => dynamics_cmd::run(common, overrides),
        Command::GasLandscape { common, overrides } => landscape_cmd::run(common, overrides),
        Command::Bench { common, overrides } => bench_cmd::run(common, overrides),
        Command::Report { common, inputs } => report_cmd::run(common, inputs),
    }
}

/// Reads a strict JSON config, or the default when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|m| CliError::Input(format!("{}: {m}", path.display())))
}

/// serde_json's messages carry the key name and `line L column C`.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Snapshot<'a, T> {
    command: &'a str,
    config: &'a T,
}

/// Writes `resolved_config.json`; rerunning with this file as `--config`
/// reproduces the run.
pub fn write_snapshot<T: Serialize>(out: &Path, command: &str, config: &T) -> CliResult<()> {
    write_json(out, "resolved_config.json", &Snapshot { command, config })
}

pub fn write_json<T: Serialize + ?Sized>(out: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(crate::Error::from)?;
    bytes.push(b'\n');
    fs::write(out.join(name), bytes)?;
    Ok(())
}

pub fn write_csv<R: Serialize>(out: &Path, name: &str, rows: &[R]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(crate::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(crate::Error::Io(e.into_error())))?;
    fs::write(out.join(name), bytes)?;
    Ok(())
}

/// Rounds grid coordinates so `k * 0.1` prints as `0.9`, not `0.9000000000000001`.
pub(crate) fn grid(start: f64, stop: f64, step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0 && step.is_finite() && start.is_finite() && stop >= start) {
        return Err(CliError::Input(format!("bad grid {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}
