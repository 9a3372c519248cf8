//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or precondition violation detected before any work ran.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Shapes of two objects that must agree do not.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A dataset CSV line failed to parse. `line` is 1-based.
    #[error("dataset parse error at line {line}: {message}")]
    DatasetParse { line: usize, message: String },

    /// Dataset file contained no samples.
    #[error("no samples")]
    EmptyDataset,

    /// Model or manifest file declares an unknown format version.
    #[error("unsupported format version: expected {expected:?}, got {got:?}")]
    VersionMismatch { expected: String, got: String },

    /// Model or manifest file is structurally broken (truncated, bad field, ...).
    #[error("malformed file: {0}")]
    MalformedFile(String),

    /// Declared dimensions do not match the parameter payload.
    #[error("shape inconsistency: {0}")]
    ShapeInconsistency(String),

    /// A training or embedding loop produced a non-finite loss value.
    #[error("non-finite {quantity} at iteration {iteration}")]
    NonFiniteLoss {
        quantity: &'static str,
        iteration: usize,
    },

    /// An optimizer step received a non-finite gradient.
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    /// Requested perplexity cannot be met for the given point count.
    #[error("perplexity {perplexity} infeasible for {n} points (need 1 < perplexity < n-1)")]
    PerplexityInfeasible { perplexity: f64, n: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
