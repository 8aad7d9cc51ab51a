//! Command errors and their process exit codes.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    /// Too many markets, replications or bootstrap replicates failed.
    #[error("failure threshold exceeded: {0}")]
    Threshold(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] mixsel_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for configuration errors, 3 for exceeded failure thresholds, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use mixsel_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::TooManyFirms(_)) => 2,
            CliError::Threshold(_) => 3,
            _ => 1,
        }
    }
}
