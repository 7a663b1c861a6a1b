//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two fields that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A spectral field fed to an operation requiring a real-valued
    /// counterpart is not conjugate-symmetric.
    #[error("spectral field not conjugate-symmetric: max asymmetry {asymmetry:.3e} exceeds {tolerance:.1e}")]
    SymmetryViolation { asymmetry: f64, tolerance: f64 },

    /// A configuration value is outside its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A shape or resolution precondition was violated.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Time integration produced a non-finite or runaway state.
    #[error("simulation diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    /// Reverse-SDE sampling produced a non-finite state.
    #[error("sampler diverged at schedule index {index}: {reason}")]
    SamplerDiverged { index: usize, reason: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact (dataset, checkpoint, config) is malformed.
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
