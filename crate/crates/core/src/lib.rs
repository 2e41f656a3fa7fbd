//! Generalisation certificates for linear and small neural classifiers,
//! built from PAC-Bayes bounds that interpolate between f-divergences and
//! Wasserstein distances.
//!
//! The crate has three layers:
//!
//! * closed-form probability machinery: isotropic Gaussian and Dirac measures
//!   with their KL / reverse-KL / squared-Hellinger / total-variation /
//!   Wasserstein quantities ([`measures`]), and the bound evaluators that
//!   consume them ([`bounds`]);
//! * an empirical estimator for the high-probability Lipschitz constant of
//!   the generalisation gap, driven by a Rademacher surrogate ([`lipschitz`]);
//! * a bound-minimisation trainer built on the parameter-free COCOB optimizer
//!   ([`trainer`]), plus predictors and their hand-derived gradients
//!   ([`models`]) and dataset plumbing ([`data`]).
//!
//! Every certificate is assembled into a [`bounds::BoundReport`] that records
//! each additive term, the delta-budget ledger, and enough ingredients to
//! recompute the final value independently.

pub mod bounds;
pub mod cli;
pub mod data;
pub mod lipschitz;
pub mod measures;
pub mod models;
pub mod trainer;

use std::path::PathBuf;

/// Crate-wide error type. Constructors validate their invariants eagerly so
/// downstream numeric code can assume well-formed inputs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Shorthand for an `InvalidParameter` with a formatted reason.
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Checks that `value` is finite, tagging failures with `context`.
pub(crate) fn ensure_finite(value: f64, context: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}
