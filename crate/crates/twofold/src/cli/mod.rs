//! Command-line front end.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::integrate::EscapingPolicy;
use crate::models::ModelSpec;
pub use commands::{Manifest, ManifestEntry, MANIFEST_SCHEMA};
pub use config::{ConfigError, CyclesConfig, GridConfig, InitialConditions, OutputFormat, ReturnMapConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Upper,
    Lower,
    Sliding,
}

impl From<PolicyArg> for EscapingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Upper => EscapingPolicy::FollowUpper,
            PolicyArg::Lower => EscapingPolicy::FollowLower,
            PolicyArg::Sliding => EscapingPolicy::FollowSliding,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "twofold", version, about = "Simulate and analyse a Filippov system around a T-singularity")]
pub struct Cli {
    /// JSON run configuration; defaults apply to every omitted key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Continuation on the escaping region.
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate every initial condition; one trajectory file each.
    Simulate,
    /// Partition cell, predicted and observed fate on a Σ grid.
    ClassifyFate,
    /// Limit cycles crossing r₀ in an interval.
    Cycles,
    /// Normalized sliding field sampled on a Σ grid.
    SlidingPortrait,
    /// First-return map studies.
    ReturnMap {
        #[command(subcommand)]
        action: ReturnMapAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReturnMapAction {
    /// Iterate the first return from each configured point.
    Iterate,
    /// Jacobian and eigenpairs of the first return at `(x₀, −x₀)`.
    Linearize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

/// Effective configuration: the file (or defaults) with flags applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(ModelSpec::Z0),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(p) = cli.policy {
        cfg.stepper.escaping_policy = p.into();
    }
    Ok(cfg)
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = resolve_config(cli).map_err(CliError::from).and_then(|cfg| commands::dispatch(&cli.command, &cfg, cli.quiet));
    match result {
        Ok(partial) => {
            if partial {
                EXIT_PARTIAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
