use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two shapes that were required to agree do not.
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// A spatial-geometry precondition was violated (empty output,
    /// indivisible extents, non-2x resolution ratio, ...).
    #[error("{op}: {msg}")]
    Geometry { op: &'static str, msg: String },

    /// Malformed on-disk data (bad magic, version, truncation).
    #[error("{what}: {msg} (at byte offset {offset})")]
    Format {
        what: &'static str,
        offset: u64,
        msg: String,
    },

    /// Invalid configuration value or key.
    #[error("config error: {0}")]
    Config(String),

    /// Batch-norm eval mode requested before any running statistics exist.
    #[error("batch norm '{0}': eval mode before any running statistics were recorded")]
    UninitializedStats(String),

    /// A NaN or infinity was produced where finite values are required.
    #[error("non-finite value in {op}: {what}")]
    NonFinite { op: String, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn geometry(op: &'static str, msg: impl ToString) -> Self {
        Error::Geometry {
            op,
            msg: msg.to_string(),
        }
    }

    pub fn format(what: &'static str, offset: u64, msg: impl ToString) -> Self {
        Error::Format {
            what,
            offset,
            msg: msg.to_string(),
        }
    }
}
