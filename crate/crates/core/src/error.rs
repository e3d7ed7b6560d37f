//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by validation, numerical routines, and the online learner.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A vector or matrix had a different dimension than the operation requires.
    #[error("dimension mismatch: expected {expected}, got {got}{}", context_suffix(context))]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A scalar parameter was outside its admissible range.
    #[error("invalid parameter `{name}`: {reason} (got {value})")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
        value: f64,
    },

    /// A matrix that must be symmetric positive definite failed its
    /// Cholesky factorization (or a pivot fell below the relative floor).
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    /// A label was incompatible with the likelihood family.
    #[error("invalid label for {family}: {reason}")]
    InvalidLabel {
        family: &'static str,
        reason: &'static str,
    },

    /// A feature vector violated the unit-norm ingestion contract.
    #[error("feature vector norm {norm} exceeds the unit ball (tolerance 1e-9)")]
    FeatureNormTooLarge { norm: f64 },

    /// The requested (likelihood, prior, method) combination is not supported.
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    /// Exact spike-and-slab support enumeration was requested above the
    /// tractable dimension limit.
    #[error("support enumeration requires dimension <= {max}, got {dim}")]
    EnumerationTooLarge { dim: usize, max: usize },

    /// A computation produced or received a non-finite value.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// An input collection that must be non-empty was empty.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A discrete distribution placed mass where the reference has none,
    /// or its masses do not form a probability vector.
    #[error("invalid probability masses: {0}")]
    InvalidMasses(String),

    /// An iterative solver failed to converge within its iteration budget.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for dimension mismatches.
    pub fn dim(expected: usize, got: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context,
        }
    }
}

/// Checks that `value` is finite and strictly positive.
pub fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::InvalidParameter {
            name,
            reason: "must be finite and > 0",
            value,
        });
    }
    Ok(())
}

/// Checks that `value` is finite and non-negative.
pub fn require_non_negative(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidParameter {
            name,
            reason: "must be finite and >= 0",
            value,
        });
    }
    Ok(())
}

/// Checks that `value` lies strictly inside the open unit interval.
pub fn require_open_unit(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 || value >= 1.0 {
        return Err(Error::InvalidParameter {
            name,
            reason: "must lie strictly inside (0, 1)",
            value,
        });
    }
    Ok(())
}
