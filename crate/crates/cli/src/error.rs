use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("no stable prices: {0}")]
    NoStablePrices(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NoStablePrices(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<tierfee_core::Error> for CliError {
    fn from(e: tierfee_core::Error) -> Self {
        match e {
            tierfee_core::Error::Infeasible(msg) => CliError::NoStablePrices(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}
