use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the minimization pipeline.
///
/// Every variant maps onto one of three exit-code classes used by the CLI:
/// usage (1), data (2) and numeric (3). See [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        row: usize,
        column: Option<usize>,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("covariance is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("imputation failed for row {row}: {message}")]
    Imputation { row: usize, message: String },

    #[error("influence table has {count} unestimated entries")]
    Unestimated { count: usize },

    #[error("no sparsity in the grid meets the accuracy drop alpha={alpha}")]
    NoFeasibleSparsity {
        alpha: f64,
        table: Vec<crate::minimize::SweepRow>,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::EmptyDataset
            | Error::DimensionMismatch(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::NotPositiveDefinite { .. }
            | Error::NonConvergence { .. }
            | Error::SolveFailed(_)
            | Error::Imputation { .. }
            | Error::Unestimated { .. }
            | Error::NoFeasibleSparsity { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
