//! Error type shared across the solver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid transport path: {0}")]
    InvalidPath(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("boundary atom at {0:?} outside payoff domain")]
    PayoffDomain(Vec<f64>),

    #[error("path contains a directed cycle; operation requires an acyclic path")]
    NotAcyclic,

    #[error("instance has {atoms} atoms, exceeding the oracle limit {limit}")]
    OracleTooLarge { atoms: usize, limit: usize },

    #[error("unbalanced measures: total source mass {source_mass} vs sink mass {sink_mass}")]
    Unbalanced { source_mass: f64, sink_mass: f64 },

    #[error(
        "relaxation failed to converge after {iterations} iterations (last step {last_step:.3e})"
    )]
    ConvergenceFailure {
        iterations: usize,
        last_step: f64,
        /// Best iterate found; callers may inspect it when diagnosing.
        best: Box<crate::path::TransportPath>,
    },

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("structure violation: {0}")]
    StructureViolation(String),

    #[error("bound inapplicable: requires 1 - 1/m < alpha < 1, got alpha={alpha} with m={m}")]
    BoundInapplicable { alpha: f64, m: usize },

    #[error("c grid too short: largest c = {largest_c} did not reach full transport; retry with larger c")]
    GridTooShort { largest_c: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
