//! Solver for ramified optimal transportation with a payoff on the boundary
//! (ROTPB) over finite atomic measures.
//!
//! Given source atoms `mu`, sink atoms `nu`, a concavity exponent
//! `alpha in [0, 1)` and a boundary payoff, the solver picks how much of
//! each atom to use and a branched transport network moving the used mass,
//! minimizing transport cost minus payoff. At oracle scale (six atoms by
//! default) the search is exhaustive and the result is a certified optimum;
//! larger instances fall back to multistart local search.
//!
//! The crate also provides the raw balanced-transport oracle
//! ([`dalpha::d_alpha`]), structure validation of certified solutions
//! ([`solve::extract_structure`], [`solve::perturbation_certificate`]), and
//! a payoff-parameter sweep ([`sweep::run_sweep`]) whose large-c limit
//! recovers an optimal transport path.

pub mod config;
pub mod dalpha;
pub mod decomp;
pub mod error;
pub mod measures;
pub mod path;
pub mod relax;
pub mod solve;
pub mod sweep;
pub mod topology;

pub use config::{RelaxationConfig, SolveMode, SolverConfig};
pub use dalpha::{c_m_alpha, c_upper_bound, d_alpha, DalphaResult};
pub use decomp::{good_decomposition, PathDecomposition};
pub use error::{Error, Result};
pub use measures::{Atom, AtomicMeasure, Point, SignedAtomicMeasure};
pub use path::{PayoffSpec, TransportPath, Vertex, VertexKind};
pub use relax::relax_positions;
pub use solve::{
    energy_value, extract_structure, perturbation_certificate, solve, solve_without_shortcut,
    solve_zero_shortcut, Allocation, BalanceClass, ComponentSummary, Side, SolveReport,
};
pub use sweep::{
    check_monotonicity, check_prop_upper_bound, check_unmoved_bound, default_c_grid, limit_path,
    run_sweep, SweepRecord, SweepReport,
};
pub use topology::{enumerate_topologies, Topology};
