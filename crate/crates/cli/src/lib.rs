//! Library side of the `tlopt` command-line tool: experiment config, the
//! pipeline commands and report aggregation.

pub mod config;
pub mod pipeline;
pub mod report;

use std::fmt;

pub use config::ExperimentConfig;
pub use pipeline::{cmd_collect, cmd_optimize, cmd_report, cmd_train, gen_patterns, Method};

/// Command failure, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent configuration, or unusable arguments.
    Config(String),
    /// Anything that went wrong while running.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(err) => write!(f, "{err:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(err: E) -> Self {
        CliError::Runtime(err.into())
    }
}
