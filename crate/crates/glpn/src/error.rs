//! Error types shared across the pipeline.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, GlpnError>;

#[derive(Debug, Error)]
pub enum GlpnError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A dataset invariant was violated by a specific record.
    #[error("record {id}: {rule}")]
    Invariant { id: String, rule: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("record {0} has no text to build a prompt from")]
    MissingText(String),

    #[error("record {0} has no held-out label")]
    MissingLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Verdict(#[from] VerdictError),

    /// Live endpoint failure that survived all retries.
    #[error("transport: {0}")]
    Transport(String),

    #[error("malformed fixture at line {line}: {message}")]
    Fixture { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A forward pass produced NaN or infinity.
    #[error("non-finite value encountered in {stage}")]
    NonFinite { stage: &'static str },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("label propagation requires at least one labeled node")]
    NoLabeledNodes,

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Why an LLM response could not be read as a verdict. Each variant is a
/// distinct, user-reportable failure; none of them panics on arbitrary input.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerdictError {
    #[error("no `Result:` token with an integer found")]
    MissingResult,

    #[error("result token `{0}` is not 0 or 1")]
    ResultOutOfRange(String),

    #[error("no `Confidence:` token with a number found")]
    MissingConfidence,

    #[error("confidence {0} is outside [0, 100]")]
    ConfidenceOutOfRange(f64),
}
