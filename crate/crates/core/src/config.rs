//! Solver configuration.

use serde::{Deserialize, Serialize};

/// Controls the branch-point position relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationConfig {
    /// Convergence tolerance on the largest branch-vertex move per sweep.
    pub position_tol: f64,
    /// Maximum number of relaxation sweeps before giving up.
    pub max_iterations: usize,
    /// Distance regularization guarding against coincident points.
    pub epsilon: f64,
    /// Number of heuristic multistarts.
    pub multistarts: usize,
    /// Seed for the heuristic mode.
    pub seed: u64,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        RelaxationConfig {
            position_tol: 1e-9,
            max_iterations: 10_000,
            epsilon: 1e-12,
            multistarts: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Exhaustive topology and allocation enumeration; certified optimum.
    Exact,
    /// Multistart local search beyond the oracle limit; not certified.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub relaxation: RelaxationConfig,
    pub mode: SolveMode,
    /// Largest atom count solved by exhaustive enumeration.
    pub oracle_limit: usize,
    /// Diameter of the ambient box; derived from the atoms when absent.
    pub domain_diam: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            relaxation: RelaxationConfig::default(),
            mode: SolveMode::Exact,
            oracle_limit: 6,
            domain_diam: None,
        }
    }
}

impl SolverConfig {
    pub fn heuristic() -> Self {
        SolverConfig {
            mode: SolveMode::Heuristic,
            ..SolverConfig::default()
        }
    }
}
