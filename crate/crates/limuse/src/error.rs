//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensor operands.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operand failed a structural precondition (divisibility, rank, range).
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// A convolution or framing op would produce an empty output.
    #[error("{op}: sequence of length {len} too short (needs at least {needed})")]
    SequenceTooShort {
        op: &'static str,
        len: usize,
        needed: usize,
    },

    /// backward() called twice on the same tape without a reset.
    #[error("backward() already ran on this tape; reset before calling again")]
    DoubleBackward,

    /// Non-finite values showed up during training or evaluation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// K-means cannot run (degenerate or empty input).
    #[error("k-means: {0}")]
    KMeans(String),

    /// Malformed configuration (file contents or field combination).
    #[error("config: {0}")]
    Config(String),

    /// Missing or malformed data files (WAV, embeddings, manifests, checkpoints).
    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}
