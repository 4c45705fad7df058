use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("svd did not converge after {sweeps} sweeps")]
    Convergence { sweeps: usize },

    #[error("arity error: {0}")]
    Arity(String),

    #[error("index {index} out of range (< {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("{path}:{line}: {msg}")]
    Ingest { path: PathBuf, line: usize, msg: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("stale trace: {0}")]
    Stale(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure at step {step}: {msg}")]
    Numeric { step: usize, msg: String },

    #[error("tolerance exceeded: {0}")]
    Tolerance(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::Convergence { .. } | Error::NonFinite(_) => 2,
            Error::Tolerance(_) => 3,
            _ => 1,
        }
    }
}
