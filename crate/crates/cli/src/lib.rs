//! Command-line orchestration for `stmodels`: configuration, the five
//! subcommands and exit-code mapping.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use stmodels::{Error, ModelKind};

pub use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("model {model}: {source}")]
    Model {
        model: ModelKind,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    /// 2 for configuration and input problems, 3 for numerical failures,
    /// 4 when a resource budget is exceeded.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model { source, .. } => source.exit_code(),
            CliError::Core(e) => match e.root() {
                Error::NotPsd { .. } | Error::Numerical(_) => 3,
                Error::Resource { .. } => 4,
                _ => 2,
            },
        }
    }

    pub fn for_model(self, model: ModelKind) -> CliError {
        match self {
            e @ CliError::Model { .. } => e,
            e => CliError::Model { model, source: Box::new(e) },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stmodels", version, about = "Hierarchical spatio-temporal Gaussian models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Comma-separated models, e.g. `A1,B,C`.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',', value_parser = parse_model)]
    pub models: Option<Vec<ModelKind>>,

    #[arg(long, global = true, value_name = "N")]
    pub iters: Option<usize>,

    #[arg(long, global = true, value_name = "N")]
    pub burnin: Option<usize>,

    #[arg(long, global = true, value_name = "N")]
    pub thin: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate a dataset and write it with its true parameters.
    Simulate,
    /// Fit the models and write chains, diagnostics and timings.
    Fit,
    /// Fit and predict at the configured targets.
    Predict,
    /// Fit, predict the held-out stations and write their indexes.
    Validate,
    /// Validate every model and write the comparison report.
    Compare,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| match e {
        Error::Schema(m) => m,
        e => e.to_string(),
    })
}

impl Cli {
    /// The configuration file (or defaults) with the command-line values
    /// applied.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            models: self.models.clone(),
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
        });
        Ok(cfg)
    }
}

/// Runs one subcommand with a resolved configuration.
pub fn run(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Simulate => commands::cmd_simulate(cfg),
        Command::Fit => commands::cmd_fit(cfg),
        Command::Predict => commands::cmd_predict(cfg),
        Command::Validate => commands::cmd_validate(cfg),
        Command::Compare => commands::cmd_compare(cfg),
    }
}
