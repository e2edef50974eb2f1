//! CLI error taxonomy: every failure carries enough provenance (file, line,
//! field) to act on without re-running.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{file}:{line}: field '{field}': {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{file}: {message}")]
    Table { file: PathBuf, message: String },
    #[error("fit failed: {0}")]
    Fit(#[from] cofam::fit::FitError),
    #[error("{0}")]
    Spatial(#[from] cofam::spatial::SpatialError),
    #[error("{0}")]
    Bayes(#[from] cofam::bayes::BayesError),
    #[error("{0}")]
    Simplex(#[from] cofam::simplex::SimplexError),
}

impl CliError {
    /// Exit code: 1 config/usage, 2 data/ingestion, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Table { .. } => 2,
            CliError::Fit(_) | CliError::Spatial(_) | CliError::Bayes(_)
            | CliError::Simplex(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
