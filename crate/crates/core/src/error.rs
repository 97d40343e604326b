use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
///
/// Messages are prefixed with the subsystem that raised them so that a CLI user
/// can tell a malformed CSV apart from a numerical breakdown.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data: {0}")]
    Csv(#[from] csv::Error),

    #[error("data: {0}")]
    InvalidData(String),

    #[error("propensity: {0}")]
    Propensity(String),

    #[error("kernels: {0}")]
    Kernel(String),

    #[error("gp: {0}")]
    Gp(String),

    #[error("effect: {0}")]
    Effect(String),

    #[error("simgen: {0}")]
    Simulation(String),

    #[error("harness: {0}")]
    Config(String),

    #[error("linalg: matrix not positive definite after jitter {jitter:.3e} ({context})")]
    NotPositiveDefinite { jitter: f64, context: String },

    #[error("harness: {failed} of {total} replications failed for method {method} (limit 20%)")]
    TooManyFailures {
        method: String,
        failed: usize,
        total: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
