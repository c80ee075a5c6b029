//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A shape with a zero or otherwise unusable extent.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// A position outside the declared shape of a sparse array.
    #[error("position {position:?} out of bounds for shape {shape:?}")]
    IndexOutOfBounds {
        position: Vec<usize>,
        shape: Vec<usize>,
    },

    /// `get_entry` hit a position that holds more than one stored value.
    /// Call `remove_duplicates` (or use `set_entry`) first.
    #[error("ambiguous duplicate entries at position {0:?}; resolve duplicates first")]
    DuplicatePosition(Vec<usize>),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A configuration value violates its documented invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A point violates cone membership beyond tolerance.
    #[error("infeasible point: {0}")]
    Infeasible(String),

    /// An operation was called before its stated precondition held.
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    /// A function evaluation produced NaN or is outside its domain.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A matrix that must be symmetric positive semidefinite is not.
    #[error("matrix is not positive semidefinite: {detail} (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd {
        detail: String,
        min_eigenvalue: f64,
    },

    /// A matrix that must have full rank does not.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// A model file failed semantic validation.
    #[error("model validation failed at `{element}`: {reason}")]
    ModelValidation { element: String, reason: String },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
