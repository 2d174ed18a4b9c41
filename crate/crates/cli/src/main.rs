//! `sgs`: data generation, distillation, evaluation, oracle and sweep runs.
//!
//! Values from `--config` are applied first and flags override them. Each
//! run writes `resolved_config*.json` next to its outputs; feeding that file
//! back through `--config` reproduces the outputs byte for byte.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "sgs",
    version,
    about = "Dataset distillation with spectral gradient surgery"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, clap::Args)]
pub struct Common {
    /// JSON run configuration; flags take precedence over its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Dataset container; the toy generator runs when omitted
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the toy multi-domain dataset
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Distill a synthetic set and write a checkpoint
    Distill {
        #[command(flatten)]
        common: Common,
        /// Also write the per-sample resultant maps of the final set
        #[arg(long = "dump-rmaps")]
        dump_rmaps: bool,
    },
    /// Run an evaluation protocol
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo check of consensus attenuation and resultant convergence
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Domain counts, comma separated
        #[arg(long = "s-list")]
        s_list: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Cluster one domain's training split into pseudo-domains
    Cluster {
        #[command(flatten)]
        common: Common,
    },
    /// Distill and evaluate once per grid value
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda-c, lambda-d or k
        #[arg(long)]
        param: String,
        /// Grid values, comma separated
        #[arg(long)]
        values: String,
        /// Cells evaluated concurrently
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<sgs_core::Error> for CliError {
    fn from(e: sgs_core::Error) -> Self {
        use sgs_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } => CliError::Io(msg),
            E::InvalidConfig(_)
            | E::InvalidSpec(_)
            | E::OutOfRange { .. }
            | E::InsufficientRange(_)
            | E::Json(_) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgs: {e}");
            ExitCode::from(e.code())
        }
    }
}
