//! The inner problem: the minimum concave transport cost between balanced
//! atomic measures, by exhaustive skeleton enumeration at oracle scale or by
//! multistart local search beyond it.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{RelaxationConfig, SolveMode, SolverConfig};
use crate::error::{Error, Result};
use crate::measures::{Atom, AtomicMeasure, SignedAtomicMeasure, MASS_TOL};
use crate::path::TransportPath;
use crate::relax::{instantiate, relax, relax_and_prune, spread, COLLAPSE_REL_TOL};
use crate::topology::{enumerate_topologies, LeafId, TopoNode, TopoTree, Topology};

/// Masses are snapped to multiples of 2^-30 on ingestion. Subtree flow sums
/// and peeling subtractions on such dyadics are exact in f64, which keeps
/// branch conservation and decomposition round-trips exact. The perturbation
/// is below the 1e-9 mass tolerance.
pub const MASS_QUANTUM: f64 = 1.0 / (1u64 << 30) as f64;

pub fn quantize_mass(m: f64) -> f64 {
    (m / MASS_QUANTUM).round() * MASS_QUANTUM
}

pub fn quantize_measure(m: &AtomicMeasure) -> Result<AtomicMeasure> {
    AtomicMeasure::new(
        m.atoms
            .iter()
            .map(|a| Atom::new(a.position.clone(), quantize_mass(a.mass)))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct DalphaResult {
    pub value: f64,
    pub path: TransportPath,
    /// True when the value comes from exhaustive enumeration.
    pub certified: bool,
}

/// Quantizes both measures and removes any residual imbalance by adjusting
/// the heaviest atom of the lighter side, so subtree sums cancel exactly.
fn prepare_balanced(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
) -> Result<(AtomicMeasure, AtomicMeasure)> {
    let (sa, sb) = (mu.total_mass(), nu.total_mass());
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::Unbalanced {
            source_mass: sa,
            sink_mass: sb,
        });
    }
    let mut mu_q = quantize_measure(mu)?;
    let mut nu_q = quantize_measure(nu)?;
    let diff = mu_q.total_mass() - nu_q.total_mass();
    if diff != 0.0 {
        let side = if diff > 0.0 { &mut nu_q } else { &mut mu_q };
        let heaviest = side
            .atoms
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.mass.total_cmp(&b.1.mass))
            .map(|(i, _)| i);
        match heaviest {
            Some(i) if side.atoms[i].mass + diff.abs() > 0.0 => {
                side.atoms[i].mass += diff.abs();
            }
            _ => {
                return Err(Error::Unbalanced {
                    source_mass: sa,
                    sink_mass: sb,
                })
            }
        }
    }
    Ok((mu_q, nu_q))
}

/// Minimum transport cost and an optimal path from `mu_t` to `nu_t`.
/// Coincident atoms of the two measures cancel before solving; the returned
/// path's boundary equals their difference within the mass tolerance.
pub fn d_alpha(
    mu_t: &AtomicMeasure,
    nu_t: &AtomicMeasure,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<DalphaResult> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let (mu_q, nu_q) = prepare_balanced(mu_t, nu_t)?;
    let net = SignedAtomicMeasure::new(nu_q, mu_q)?;
    let sources = net.negative.atoms;
    let sinks = net.positive.atoms;
    if sources.is_empty() && sinks.is_empty() {
        return Ok(DalphaResult {
            value: 0.0,
            path: TransportPath::empty(),
            certified: true,
        });
    }
    let count = sources.len() + sinks.len();
    if count <= cfg.oracle_limit {
        let (value, path) = exact_min_cost(&sources, &sinks, alpha, cfg)?;
        Ok(DalphaResult {
            value,
            path,
            certified: true,
        })
    } else if cfg.mode == SolveMode::Heuristic {
        let (value, path) = heuristic_min_cost(&sources, &sinks, alpha, cfg)?;
        Ok(DalphaResult {
            value,
            path,
            certified: false,
        })
    } else {
        Err(Error::OracleTooLarge {
            atoms: count,
            limit: cfg.oracle_limit,
        })
    }
}

fn collapse_length(sources: &[Atom], sinks: &[Atom], cfg: &SolverConfig) -> f64 {
    let pts: Vec<_> = sources
        .iter()
        .chain(sinks)
        .map(|a| a.position.clone())
        .collect();
    let diam = cfg.domain_diam.unwrap_or_else(|| spread(&pts)).max(1e-300);
    COLLAPSE_REL_TOL * diam
}

/// Exhaustive enumeration: relax every feasible skeleton and take the argmin,
/// breaking value ties by the canonical skeleton encoding.
pub(crate) fn exact_min_cost(
    sources: &[Atom],
    sinks: &[Atom],
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<(f64, TransportPath)> {
    let max_branch = (sources.len() + sinks.len()).saturating_sub(2);
    let topologies =
        enumerate_topologies(sources.len(), sinks.len(), max_branch, cfg.oracle_limit)?;
    let collapse = collapse_length(sources, sinks, cfg);
    let candidates: Vec<Option<(f64, Vec<(i64, i64)>, TransportPath)>> = topologies
        .par_iter()
        .map(|topo| -> Result<Option<_>> {
            let Some(graph) = instantiate(topo, sources, sinks)? else {
                return Ok(None);
            };
            let path = relax_and_prune(graph, alpha, &cfg.relaxation, collapse)?;
            let cost = path.m_alpha(alpha)?;
            Ok(Some((cost, topo.canonical_key(), path)))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = candidates
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    match best {
        Some((cost, _, path)) => Ok((cost, path)),
        None => Err(Error::Unbalanced {
            source_mass: sources.iter().map(|a| a.mass).sum(),
            sink_mass: sinks.iter().map(|a| a.mass).sum(),
        }),
    }
}

/// Upper bound on the transport cost between measures of the given total
/// mass inside a box of diameter `diam` in dimension `m`; finite only for
/// alpha above 1 - 1/m.
pub fn c_upper_bound(total_mass: f64, diam: f64, alpha: f64, m: usize) -> Result<f64> {
    Ok(c_m_alpha(alpha, m)? * diam * total_mass.powf(alpha))
}

/// The dimensional constant sqrt(m) / (2 (2^(1 - m(1-alpha)) - 1)).
pub fn c_m_alpha(alpha: f64, m: usize) -> Result<f64> {
    if alpha <= 1.0 - 1.0 / m as f64 || alpha >= 1.0 {
        return Err(Error::BoundInapplicable { alpha, m });
    }
    let denom = 2.0 * (2f64.powf(1.0 - m as f64 * (1.0 - alpha)) - 1.0);
    Ok((m as f64).sqrt() / denom)
}

// ---------------------------------------------------------------------------
// Heuristic mode: greedy insertion trees with leaf-reinsertion moves.
// ---------------------------------------------------------------------------

/// Tree under local search: leaves are indices into the atom lists, shapes
/// use the same coding as the exhaustive enumerator.
struct SearchTree {
    leaves: Vec<LeafId>,
    shape: Vec<(i64, i64)>,
    n_branches: usize,
}

impl SearchTree {
    fn to_topology(&self) -> Topology {
        let decode = |c: i64| -> TopoNode {
            if c >= 0 {
                TopoNode::Leaf(self.leaves[c as usize])
            } else {
                TopoNode::Branch((-c - 1) as usize)
            }
        };
        Topology {
            trees: vec![TopoTree {
                leaves: self.leaves.clone(),
                n_branches: self.n_branches,
                edges: self
                    .shape
                    .iter()
                    .map(|&(a, b)| (decode(a), decode(b)))
                    .collect(),
            }],
        }
    }
}

fn quick_cost(
    tree: &SearchTree,
    sources: &[Atom],
    sinks: &[Atom],
    alpha: f64,
    sweeps: usize,
) -> Option<f64> {
    let topo = tree.to_topology();
    let mut graph = instantiate_unchecked(&topo, sources, sinks)?;
    let quick = RelaxationConfig {
        max_iterations: sweeps,
        position_tol: 1e-7,
        ..RelaxationConfig::default()
    };
    // quick passes tolerate non-convergence; they only rank candidates
    relax(&mut graph, alpha, &quick);
    Some(graph.cost(alpha))
}

/// Instantiation that tolerates unbalanced intermediate trees by letting the
/// first leaf absorb the residual; used only to rank partial candidates.
fn instantiate_unchecked(
    topo: &Topology,
    sources: &[Atom],
    sinks: &[Atom],
) -> Option<crate::relax::WorkGraph> {
    match instantiate(topo, sources, sinks) {
        Ok(Some(g)) => Some(g),
        _ => instantiate_with_slack_root(topo, sources, sinks),
    }
}

fn instantiate_with_slack_root(
    topo: &Topology,
    sources: &[Atom],
    sinks: &[Atom],
) -> Option<crate::relax::WorkGraph> {
    // Add a phantom balancing mass at the first leaf's own position: flows
    // stay conservation-consistent away from that leaf and the geometry is
    // unchanged, which is all the greedy ranking needs.
    let imbalance: f64 = topo
        .trees
        .iter()
        .flat_map(|t| t.leaves.iter())
        .map(|l| match l {
            LeafId::Source(i) => sources[*i].mass,
            LeafId::Sink(j) => -sinks[*j].mass,
        })
        .sum();
    let first = topo.trees.first()?.leaves.first()?;
    let mut src = sources.to_vec();
    let mut snk = sinks.to_vec();
    match first {
        LeafId::Source(i) => src[*i].mass -= imbalance,
        LeafId::Sink(j) => snk[*j].mass += imbalance,
    }
    if src.iter().chain(&snk).any(|a| a.mass <= 0.0) {
        return None;
    }
    instantiate(topo, &src, &snk).ok().flatten()
}

fn insert_leaf_best(
    tree: &mut SearchTree,
    leaf_code: i64,
    sources: &[Atom],
    sinks: &[Atom],
    alpha: f64,
) {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..tree.shape.len() {
        let mut trial = SearchTree {
            leaves: tree.leaves.clone(),
            shape: tree.shape.clone(),
            n_branches: tree.n_branches,
        };
        subdivide(&mut trial, i, leaf_code);
        if let Some(cost) = quick_cost(&trial, sources, sinks, alpha, 60) {
            if best.map_or(true, |(bc, _)| cost < bc) {
                best = Some((cost, i));
            }
        }
    }
    let (_, edge) = best.unwrap_or((f64::INFINITY, 0));
    subdivide(tree, edge, leaf_code);
}

fn subdivide(tree: &mut SearchTree, edge: usize, leaf_code: i64) {
    let new_branch = -(tree.n_branches as i64 + 1);
    let (a, b) = tree.shape[edge];
    tree.shape[edge] = (a, new_branch);
    tree.shape.push((new_branch, b));
    tree.shape.push((leaf_code, new_branch));
    tree.n_branches += 1;
}

/// Removes leaf `code` and splices the tree back together; returns false if
/// the tree is too small to remove anything.
fn remove_leaf(tree: &mut SearchTree, code: i64) -> bool {
    if tree.shape.len() <= 1 {
        return false;
    }
    let pos = tree
        .shape
        .iter()
        .position(|&(a, b)| a == code || b == code)
        .expect("leaf present");
    let (a, b) = tree.shape[pos];
    let hub = if a == code { b } else { a };
    if hub >= 0 {
        return false; // two-leaf tree
    }
    tree.shape.remove(pos);
    let incident: Vec<usize> = tree
        .shape
        .iter()
        .enumerate()
        .filter(|(_, &(x, y))| x == hub || y == hub)
        .map(|(i, _)| i)
        .collect();
    debug_assert_eq!(incident.len(), 2);
    let (x1, y1) = tree.shape[incident[0]];
    let (x2, y2) = tree.shape[incident[1]];
    let end1 = if x1 == hub { y1 } else { x1 };
    let end2 = if x2 == hub { y2 } else { x2 };
    tree.shape.remove(incident[1]);
    tree.shape[incident[0]] = (end1, end2);
    true
}

pub(crate) fn heuristic_min_cost(
    sources: &[Atom],
    sinks: &[Atom],
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<(f64, TransportPath)> {
    let collapse = collapse_length(sources, sinks, cfg);
    let starts = cfg.relaxation.multistarts.max(1);
    let results: Vec<Result<(f64, TransportPath)>> = (0..starts)
        .into_par_iter()
        .map(|start| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.relaxation.seed ^ (start as u64) << 17);
            let mut order: Vec<LeafId> = (0..sources.len())
                .map(LeafId::Source)
                .chain((0..sinks.len()).map(LeafId::Sink))
                .collect();
            order.shuffle(&mut rng);
            // begin from a source-sink pair so the seed edge carries flow
            let si = order
                .iter()
                .position(|l| matches!(l, LeafId::Source(_)))
                .expect("at least one source");
            order.swap(0, si);
            let ti = order
                .iter()
                .position(|l| matches!(l, LeafId::Sink(_)))
                .expect("at least one sink");
            order.swap(1, ti);

            let mut tree = SearchTree {
                leaves: order.clone(),
                shape: vec![(0, 1)],
                n_branches: 0,
            };
            for code in 2..order.len() as i64 {
                insert_leaf_best(&mut tree, code, sources, sinks, alpha);
            }
            // leaf re-insertion rounds (branch remove + insert)
            for _ in 0..2 * order.len() {
                let code = rng.gen_range(0..order.len()) as i64;
                let before = quick_cost(&tree, sources, sinks, alpha, 60);
                let mut trial = SearchTree {
                    leaves: tree.leaves.clone(),
                    shape: tree.shape.clone(),
                    n_branches: tree.n_branches,
                };
                if !remove_leaf(&mut trial, code) {
                    continue;
                }
                insert_leaf_best(&mut trial, code, sources, sinks, alpha);
                let after = quick_cost(&trial, sources, sinks, alpha, 60);
                if let (Some(b), Some(a)) = (before, after) {
                    if a < b {
                        tree = trial;
                    }
                }
            }
            let topo = tree.to_topology();
            let graph = instantiate(&topo, sources, sinks)?
                .ok_or_else(|| Error::InvalidParameter("heuristic tree unbalanced".into()))?;
            let path = relax_and_prune(graph, alpha, &cfg.relaxation, collapse)?;
            let cost = path.m_alpha(alpha)?;
            Ok((cost, path))
        })
        .collect();
    let mut best: Option<(f64, TransportPath)> = None;
    for r in results {
        let (cost, path) = r?;
        if best.as_ref().map_or(true, |(bc, _)| cost < *bc) {
            best = Some((cost, path));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no heuristic candidate produced".into()))
}
