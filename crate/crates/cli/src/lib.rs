//! Experiment runner: config files, topology generation, grid execution.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod summarize;
pub mod topology;

pub use config::{parse_experiment, ExperimentSpec, Grid, RunSpec};
pub use experiment::{run_experiment, ExperimentSummary};
pub use topology::{generate_topology, GenKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} run(s) failed: {}", .0.len(), .0.join("; "))]
    RunsFailed(Vec<String>),
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
