//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Degenerate geometry (e.g. a zero-length direction vector).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// More satellites selected than subcarriers available.
    #[error("infeasible bandwidth partition: {0}")]
    InfeasiblePartition(String),

    /// Feasible initialization failed; the offending user is reported so the
    /// outer search can discard the satellite subset that caused it.
    #[error("initialization infeasible: no solvable placement for UE {ue}")]
    InitializationInfeasible { ue: usize },

    /// The outer search never found a satellite subset with a feasible
    /// initialization.
    #[error("no feasible configuration found")]
    NoFeasibleConfiguration,

    /// Scenario file could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// Scenario file parsed but violates an invariant; `key` is the offending
    /// config path.
    #[error("config validation error at `{key}`: {msg}")]
    ConfigValidation { key: String, msg: String },

    /// Baseline comparison over records that do not share (slot, seed) cells.
    #[error("comparison pairing error: {0}")]
    ComparisonPairing(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
