//! `openturb`: run ensembles, grid evolutions, closed-form tables, regime
//! analysis and the acceptance suite from a `key = value` config.

// `!(a > b)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "openturb", version, about = "Stochastic phase-space dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags that override config entries; values are validated like config
/// values.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// `key = value` experiment file.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub n_traj: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub t_final: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Replaces any noise specification in the config.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, conflicts_with = "undamped")]
    pub damped: bool,
    #[arg(long, global = true)]
    pub undamped: bool,
    /// `exact-ou` or `euler-maruyama`.
    #[arg(long, global = true)]
    pub integrator: Option<String>,
    /// Write a grid snapshot every N solver steps.
    #[arg(long, global = true)]
    pub snapshot_every: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo ensemble; writes moments.csv.
    Simulate,
    /// Fokker-Planck grid evolution; writes fpe_moments.csv and snapshots.
    Fpe,
    /// Closed-form moments at the sample times; writes oracle.csv.
    OracleTable,
    /// Regime, deviation and energy reports from a moments or oracle CSV.
    Analyze {
        #[arg(long)]
        input: PathBuf,
    },
    /// Runs the acceptance suite; exit code 0 iff every criterion passes.
    Check {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate => commands::simulate(&cli.overrides),
        Command::Fpe => commands::fpe(&cli.overrides),
        Command::OracleTable => commands::oracle_table(&cli.overrides),
        Command::Analyze { input } => commands::analyze(&cli.overrides, input),
        Command::Check { only } => commands::check(&cli.overrides, only),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                eprintln!("invalid config: {c}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
