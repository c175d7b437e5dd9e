//! `qfield` command-line driver.
//!
//! Every command reads a TOML run configuration, writes its outputs with a
//! JSON sidecar each into the output directory and returns an exit code:
//! 0 when all assertions hold, 1 when a mathematical assertion fails, 2 on a
//! configuration or IO error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

pub use config::{Format, Overrides, RunConfig};
pub use output::BUILD_ID;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Accepted values of `QFIELD_LOG`.
pub const LOG_LEVELS: [&str; 4] = ["error", "warn", "info", "debug"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Math(#[from] qfield_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use qfield_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            // parameters the run configuration put out of range
            CliError::Math(
                E::Domain(_) | E::InsufficientData(_) | E::EmptyLadder | E::GridMismatch(_),
            ) => EXIT_CONFIG,
            CliError::Math(_) => EXIT_ASSERTION,
        }
    }
}

/// Whether every assertion of a command held.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn from_passed(passed: bool) -> Self {
        if passed {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qfield",
    version,
    about = "Simulate and verify q-Brownian sheets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check conditions (q1)-(q3) and kernel monotonicity of the gauge.
    GaugeCheck(CommonArgs),
    /// Draw exact samples on a dyadic grid.
    Simulate(CommonArgs),
    /// Isotropy, local nondeterminism and Anderson-inequality checks.
    Verify(CommonArgs),
    /// Multi-resolution modulus-of-continuity estimate.
    Modulus(CommonArgs),
    /// Chaining integral by two independent evaluations.
    EntropyIntegral(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides `run.master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides `run.threads`.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Format of tabular outputs; overrides `output.format`.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            format: self.format,
        }
    }
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("QFIELD_LOG") {
        Ok(v) if LOG_LEVELS.contains(&v.as_str()) => v,
        Ok(v) => {
            return Err(CliError::Config(format!(
                "QFIELD_LOG must be one of {}, got {v:?}",
                LOG_LEVELS.join(", ")
            )))
        }
        Err(_) => "warn".to_owned(),
    };
    // a second initialisation in the same process keeps the first logger
    let _ = env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns its exit
/// code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_PASS
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Outcome::Pass) => EXIT_PASS,
        Ok(Outcome::Fail) => EXIT_ASSERTION,
        Err(e) => {
            eprintln!("qfield: {e}");
            e.exit_code()
        }
    }
}

type Handler = fn(&RunConfig, u64) -> Result<Outcome, CliError>;

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    init_logging()?;
    let (args, cmd): (&CommonArgs, Handler) = match &cli.command {
        Command::GaugeCheck(a) => (a, commands::gauge_check),
        Command::Simulate(a) => (a, commands::simulate),
        Command::Verify(a) => (a, commands::verify),
        Command::Modulus(a) => (a, commands::modulus),
        Command::EntropyIntegral(a) => (a, commands::entropy_integral),
    };
    let cfg = RunConfig::load(&args.config, &args.overrides())?;
    let seed = match cfg.run.master_seed {
        Some(s) => s,
        None => {
            let s = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_nanos() as u64);
            log::warn!("no master_seed configured; using {s}, recorded in every sidecar");
            s
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| cmd(&cfg, seed))
}
