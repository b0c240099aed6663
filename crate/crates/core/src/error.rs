use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("division by zero in {op}")]
    DivisionByZero { op: &'static str },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward requires a gradient-tracked output")]
    NotTracked,

    #[error("gradient tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("missing input: {0}")]
    Missing(&'static str),

    #[error("no anchor in the batch has a positive")]
    NoPositives,

    #[error("degenerate activations: {0}")]
    Degenerate(String),

    #[error("checkpoint format version mismatch: {0}")]
    VersionMismatch(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("bad magic number {found:#010x} in {path}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
