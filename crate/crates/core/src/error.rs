//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A profile table or system constant fails its invariants.
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    /// Environment statistics fail their invariants.
    #[error("invalid environment stats: {0}")]
    InvalidStats(String),

    /// An argument is outside an operation's domain (index out of range,
    /// non-positive frequency, negative power or gain, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An allocation violates one of the feasibility constraints. The
    /// constraint is named (C1..C5 plus structural checks) so callers can
    /// report exactly what was violated.
    #[error("infeasible allocation: constraint {constraint} violated: {detail}")]
    Infeasible {
        constraint: &'static str,
        detail: String,
    },

    /// An exhaustive oracle was asked to enumerate a space above its guard.
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    /// A configuration file failed to parse or validate.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
