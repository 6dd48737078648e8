use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix could not be factorized after jitter escalation to {max_jitter:e}")]
    Singular { max_jitter: f64 },

    #[error("covariance is rank deficient: smallest eigenvalue {min_eigenvalue:e}, condition {condition:e}")]
    RankDeficient { min_eigenvalue: f64, condition: f64 },

    #[error("degenerate batch: need at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("loss kind {0} has no second derivative")]
    UnsupportedLoss(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
