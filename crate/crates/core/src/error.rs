use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the tensor core, model, pipeline, and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors disagree on a dimension. `axis` names the offending axis.
    #[error("{op}: {axis} mismatch (expected {expected}, got {got})")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    /// An operation contract was violated (non-scalar loss, empty span, ...).
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// A configuration value is invalid or inconsistent.
    #[error("config: {0}")]
    Config(String),

    /// Input data is malformed (bad file, bad labels, empty record, ...).
    #[error("data: {0}")]
    Data(String),

    /// A numeric failure: NaN/Inf where finite values are required.
    #[error("numeric: {0}")]
    Numeric(String),

    /// An operation variant the engine deliberately does not support.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape { op, axis, expected, got }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: detail.into() }
    }
}
