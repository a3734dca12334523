use std::path::PathBuf;

use thiserror::Error;

/// Fatal errors; per-row failures are recorded in the output instead.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, #[source] std::io::Error),

    #[error("writing {path}: {source}", path = .0.display(), source = .1)]
    Csv(PathBuf, #[source] csv::Error),

    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),

    #[error("experiment failed: {0}")]
    Experiment(#[from] opesel_core::Error),

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
