//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch; the message names the offending axis.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Non-finite values or invalid numeric domain (e.g. non-positive map maximum).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Computation-graph misuse (non-scalar loss, broken topological order).
    #[error("graph error: {0}")]
    Graph(String),

    /// A slice stack or volume with no slices.
    #[error("empty stack: {0}")]
    EmptyStack(String),

    /// Per-plane backbone outputs disagree at a fusion point.
    #[error("fusion error: {0}")]
    Fusion(String),

    /// Logistic-regression fit on single-class labels.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Training cannot proceed (e.g. single-class dataset).
    #[error("training error: {0}")]
    Training(String),

    /// Invalid bounding-box annotation (out of bounds, bad coordinates).
    #[error("annotation error: {0}")]
    Annotation(String),

    /// A metric has no defined value for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Malformed grid or checkpoint file; `offset` is the byte position.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Out-of-range slice or layer index.
    #[error("index error: {0}")]
    Index(String),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
