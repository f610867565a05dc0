//! `relsense <command> --config <file> --out <dir> [--seed N]`
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 configuration or usage error,
//! 3 robustness violation, 4 simulation divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "relsense",
    version,
    about = "Relative-sensing control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Singular values, noise gains and small-eigenvalue census.
    Spectrum(Common),
    /// Worst-case sensing error for one mode and the resulting poles.
    Worstcase {
        #[command(flatten)]
        common: Common,
        /// 1-based observable mode; defaults to the least observable one.
        #[arg(long)]
        mode: Option<usize>,
    },
    /// Exclusion zones and loop clearance over spatial frequencies.
    Nyquist(Common),
    /// Open- and closed-loop simulation with shared disturbances.
    Simulate(Common),
    /// Modal gain and leakage schedule.
    Tune(Common),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Library(relsense::Error),
    Io(std::io::Error),
}

impl From<relsense::Error> for CliError {
    fn from(e: relsense::Error) -> Self {
        CliError::Library(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use relsense::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Library(
                E::InvalidSize(_)
                | E::InvalidGeometry(_)
                | E::InvalidArgument(_)
                | E::DimensionMismatch(_)
                | E::InvalidMode { .. }
                | E::InfiniteSensitivity(_)
                | E::Partition { .. }
                | E::OffGrid { .. }
                | E::UnsupportedStructure(_)
                | E::Underdetermined(_),
            ) => 2,
            CliError::Library(_) | CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Library(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    RobustnessViolation,
    Diverged,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("RELSENSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "RELSENSE_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    init_threads()?;
    match cli.command {
        Command::Spectrum(c) => commands::spectrum(&c),
        Command::Worstcase { common, mode } => commands::worstcase(&common, mode),
        Command::Nyquist(c) => commands::nyquist(&c),
        Command::Simulate(c) => commands::simulate(&c),
        Command::Tune(c) => commands::tune(&c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::RobustnessViolation) => {
            eprintln!("robustness violation: a closed-loop pole has positive real part");
            ExitCode::from(3)
        }
        Ok(Outcome::Diverged) => {
            eprintln!("simulation diverged");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("relsense: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
