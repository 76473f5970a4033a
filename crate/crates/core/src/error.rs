//! Error taxonomy shared by every module in the crate.
//!
//! The variants map onto the failure classes the operations can signal:
//! bad arguments, tolerance not reached after maximal refinement, states
//! too wide for the truncated box, degenerate (numerically zero) data,
//! and iterative-solver breakdown.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the operation's domain (non-finite entries,
    /// negative times, mismatched shapes, bad parameter ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An adaptive method stopped refining before the requested
    /// tolerance was met; carries the achieved error estimate.
    #[error("convergence failure: achieved error {achieved:e} > requested {requested:e}")]
    Convergence { achieved: f64, requested: f64 },

    /// The state (or a flowed image of it) carries too much mass near
    /// the box boundary, so the periodized representation is invalid.
    #[error("domain truncation: boundary mass fraction {mass_fraction:e} exceeds {threshold:e}")]
    DomainTruncation { mass_fraction: f64, threshold: f64 },

    /// A quantity that must be strictly positive is numerically zero
    /// (zero observation, vanished final state).
    #[error("degenerate case: {0}")]
    Degenerate(String),

    /// Iterative solver diverged or broke down.
    #[error("solver failure after {iterations} iterations: {message}")]
    SolverFailure { iterations: usize, message: String },

    /// Bound evaluated outside its validity regime (e.g. observation
    /// norm too large for a logarithmic stability estimate).
    #[error("out of regime: {0}")]
    OutOfRegime(String),

    /// Malformed state or observation-set file.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
