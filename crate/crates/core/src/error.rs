use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("k-means needs {k} distinct points but found {distinct} ({deficit} short)")]
    TooFewDistinctPoints {
        k: usize,
        distinct: usize,
        deficit: usize,
    },

    #[error("matrix is not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("missing target for enabled stream `{0}`")]
    MissingTarget(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("malformed {format} data at byte {offset}: {reason}")]
    Format {
        format: &'static str,
        offset: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
