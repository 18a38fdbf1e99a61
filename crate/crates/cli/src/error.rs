use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{method}, run {run} (scenario seed {scenario_seed}, filter seed {filter_seed}): {source}")]
    Cell {
        method: String,
        run: usize,
        scenario_seed: u64,
        filter_seed: u64,
        source: gtbp::Error,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<gtbp::Error> for CliError {
    fn from(e: gtbp::Error) -> Self {
        match e {
            gtbp::Error::Config { .. } | gtbp::Error::Scenario(_) | gtbp::Error::InvalidModel(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
