use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("site {site} has {fraction:.3} missing observations, above the cap {cap:.3}")]
    MissingCap { site: String, fraction: f64, cap: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate covariate `{0}`: zero variance")]
    DegenerateCovariate(String),

    #[error("matrix is not positive definite after jitter up to {max_jitter:e}")]
    NotPsd { max_jitter: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("dense dimension {dim} exceeds the budget of {budget}")]
    Resource { dim: usize, budget: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// The innermost error, skipping iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
