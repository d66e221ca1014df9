use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration for {op}: {msg}")]
    Config { op: &'static str, msg: String },

    #[error("binarizer input out of [-1,1] at index {index}: {value}")]
    Domain { index: usize, value: f64 },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("format error in {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("header field `{field}` mismatch: file has {found}, expected {expected}")]
    HeaderMismatch {
        field: &'static str,
        found: u64,
        expected: u64,
    },

    #[error("training aborted: {0}")]
    Train(String),

    #[error("{0}: {1}")]
    Path(String, std::io::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Config { op, msg: msg.into() }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { what, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
