//! Decomposition of an acyclic transport path into weighted source-to-sink
//! simple paths whose weights re-sum to the edge flows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::TransportPath;

/// Residual flows at or below this are treated as exhausted while tracing.
/// Solver-built paths carry dyadically quantized flows, so their residuals
/// are either exactly zero or well above this cutoff.
const TRACE_CUTOFF: f64 = 1e-12;
/// Residual left stranded at branch vertices (conservation slack) up to this
/// amount is discarded rather than peeled.
const STRANDED_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPath {
    /// Vertex ids from a source to a sink; simple by acyclicity.
    pub vertices: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathDecomposition {
    pub paths: Vec<WeightedPath>,
}

impl PathDecomposition {
    pub fn total_weight(&self) -> f64 {
        self.paths.iter().map(|p| p.weight).sum()
    }

    /// Sum over paths of weight times the path's polyline length.
    pub fn total_cost(&self, path: &TransportPath) -> f64 {
        self.paths
            .iter()
            .map(|p| {
                let len: f64 = p
                    .vertices
                    .windows(2)
                    .map(|w| {
                        path.vertices()[w[0]]
                            .position
                            .dist(&path.vertices()[w[1]].position)
                    })
                    .sum();
                p.weight * len
            })
            .sum()
    }

    /// Re-sums the path weights edge by edge and compares with the stored
    /// flows. Exact equality is expected for solver-built paths.
    pub fn recovers_flows_exactly(&self, path: &TransportPath) -> bool {
        self.recovered_flows(path)
            .iter()
            .zip(path.edges())
            .all(|(sum, e)| *sum == e.flow)
    }

    pub fn max_recovery_error(&self, path: &TransportPath) -> f64 {
        self.recovered_flows(path)
            .iter()
            .zip(path.edges())
            .map(|(sum, e)| (sum - e.flow).abs())
            .fold(0.0, f64::max)
    }

    fn recovered_flows(&self, path: &TransportPath) -> Vec<f64> {
        let mut sums = vec![0.0; path.edges().len()];
        for wp in &self.paths {
            for w in wp.vertices.windows(2) {
                let idx = path
                    .edges()
                    .iter()
                    .position(|e| e.tail == w[0] && e.head == w[1])
                    .expect("decomposition references an existing edge");
                sums[idx] += wp.weight;
            }
        }
        sums
    }
}

/// Peels weighted source-to-sink paths off the residual flow until it is
/// exhausted. Each peel is capped by the remaining supply of its start and
/// the remaining demand of its end, so boundary vertices with through-flow
/// contribute exactly their own divergence. Tie-breaks are deterministic:
/// tracing starts at the smallest source vertex id and always follows the
/// smallest outgoing edge id.
pub fn good_decomposition(path: &TransportPath) -> Result<PathDecomposition> {
    if path.is_empty() {
        return Ok(PathDecomposition::default());
    }
    if !path.is_acyclic() {
        return Err(Error::NotAcyclic);
    }
    let n = path.vertices().len();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in path.edges().iter().enumerate() {
        out[e.tail].push(i); // edge ids ascend within each list
    }
    let mut supply = vec![0.0; n];
    let mut demand = vec![0.0; n];
    for (v, d) in path.divergences().iter().enumerate() {
        if *d > 0.0 {
            demand[v] = *d;
        } else {
            supply[v] = -d;
        }
    }
    let mut residual: Vec<f64> = path.edges().iter().map(|e| e.flow).collect();
    let mut decomposition = PathDecomposition::default();
    let max_peels = 2 * path.edges().len() * n + 64;

    for _ in 0..max_peels {
        let source = (0..n).find(|&v| supply[v] > TRACE_CUTOFF);
        let Some(source) = source else {
            let stranded: f64 = residual.iter().filter(|r| **r > TRACE_CUTOFF).sum();
            if stranded > STRANDED_TOL {
                return Err(Error::InvalidPath(format!(
                    "flow residual {stranded:.3e} stranded at branch vertices"
                )));
            }
            return Ok(decomposition);
        };
        // Trace forward along positive residual, smallest edge id first.
        let mut vertices = vec![source];
        let mut trail: Vec<usize> = Vec::new();
        let mut at = source;
        loop {
            let next = out[at]
                .iter()
                .copied()
                .find(|&i| residual[i] > TRACE_CUTOFF);
            match next {
                Some(i) => {
                    trail.push(i);
                    at = path.edges()[i].head;
                    vertices.push(at);
                }
                None => break,
            }
        }
        if trail.is_empty() {
            return Err(Error::InvalidPath(
                "source vertex has no outgoing residual flow".into(),
            ));
        }
        let bottleneck = trail
            .iter()
            .map(|&i| residual[i])
            .fold(f64::INFINITY, f64::min)
            .min(supply[source])
            .min(demand[at]);
        if bottleneck <= TRACE_CUTOFF {
            // conservation-slack crumb; retire this source and move on
            supply[source] = 0.0;
            continue;
        }
        for &i in &trail {
            if residual[i] == bottleneck {
                residual[i] = 0.0;
            } else {
                residual[i] -= bottleneck;
            }
        }
        supply[source] = if supply[source] == bottleneck {
            0.0
        } else {
            supply[source] - bottleneck
        };
        demand[at] = if demand[at] == bottleneck {
            0.0
        } else {
            demand[at] - bottleneck
        };
        decomposition.paths.push(WeightedPath {
            vertices,
            weight: bottleneck,
        });
    }
    Err(Error::InvalidPath("path peeling did not terminate".into()))
}
