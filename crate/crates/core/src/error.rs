use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("singular covariance: eigenvalue #{index} = {value:e} is at or below threshold {threshold:e}")]
    SingularCovariance { index: usize, value: f64, threshold: f64 },

    #[error("invalid edit{}: {reason}", .index.map(|i| format!(" #{i}")).unwrap_or_default())]
    InvalidEdit { index: Option<usize>, reason: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("capacity exceeded: cannot place {requested} orthogonal keys in dimension {dim}")]
    Capacity { requested: usize, dim: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated dump: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by how the caller wired inputs together
    /// (shapes, arguments), as opposed to numeric or data failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. } | Error::InvalidInput(_) | Error::Capacity { .. }
        )
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
