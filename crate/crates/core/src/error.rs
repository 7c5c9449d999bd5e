use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree for the named operation.
    #[error("{op}: dimension mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at position {position}")]
    NonFinite { position: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Caller broke an API contract (e.g. a non-scalar loss passed to backward).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}, iteration {iteration} (loss {loss})")]
    Divergence {
        epoch: usize,
        iteration: usize,
        loss: f64,
    },

    #[error("AUC undefined: labels contain a single class")]
    UndefinedAuc,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
