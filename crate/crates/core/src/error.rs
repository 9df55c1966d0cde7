//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. Variants are
//! grouped by failure class rather than by module so that callers (the CLI,
//! the C ABI) can map them onto a small set of exit/status codes.

use thiserror::Error;

/// Failure classes for pricing, dynamics, and solver operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a constructor or operation precondition.
    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument {
        /// Name of the offending argument or config field.
        arg: &'static str,
        /// What the precondition was and how it was violated.
        reason: String,
    },

    /// Vector lengths disagree (belief blocks, payoff table, gradients).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A utility inverse was requested at or above the value supremum.
    #[error("utility level {level} is outside the range of the utility (supremum {supremum})")]
    UtilityRange {
        /// Requested utility level.
        level: f64,
        /// Supremum of the utility's range; the inverse exists only below it.
        supremum: f64,
    },

    /// The indifference equation has no solution for the given data.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An iterative numeric routine failed to converge.
    #[error("numerical failure in {context}: no convergence within {iterations} iterations (last bracket [{bracket_lo}, {bracket_hi}], residual {residual:e})")]
    NoConvergence {
        /// Which routine failed (root finder, inner minimizer, ...).
        context: &'static str,
        /// Iterations spent before giving up.
        iterations: usize,
        /// Lower end of the last bracket or trust interval.
        bracket_lo: f64,
        /// Upper end of the last bracket or trust interval.
        bracket_hi: f64,
        /// Residual magnitude at the last iterate.
        residual: f64,
    },

    /// The per-period implicit fixed-point solve did not converge.
    #[error("implicit step solver stalled at period {period}: residual {residual:e} after {iterations} iterations")]
    StepSolver {
        /// Period index at which the solve stalled.
        period: usize,
        /// Iterations spent in the Picard loop.
        iterations: usize,
        /// Max-norm fixed-point residual at the last iterate.
        residual: f64,
    },

    /// A quantity that must be strictly positive for monotonicity was not.
    #[error("lost monotonicity: {0}")]
    Monotonicity(String),

    /// Config file could not be read, parsed, or validated.
    #[error("config error: {0}")]
    Config(String),

    /// Output files could not be written.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
