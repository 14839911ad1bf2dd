//! Instantiation of a topology against concrete atoms and the geometric
//! relaxation of its branch-vertex positions.
//!
//! For a fixed skeleton the cost sum_e flow_e^alpha * length_e is convex in
//! the branch positions; each sweep moves every branch vertex to a weighted
//! geometric-median step with epsilon-regularized distances.

use crate::config::RelaxationConfig;
use crate::error::{Error, Result};
use crate::measures::{Atom, AtomicMeasure, Point};
use crate::path::{Edge, TransportPath, Vertex, VertexKind, FLOW_DROP_TOL};
use crate::topology::{LeafId, TopoNode, Topology};

/// Edges shorter than this fraction of the domain diameter are collapsed
/// when pruning a relaxed graph.
pub const COLLAPSE_REL_TOL: f64 = 1e-7;

/// Mutable graph under relaxation. Flows are fixed by conservation; only
/// branch positions move.
#[derive(Debug, Clone)]
pub(crate) struct WorkGraph {
    pub positions: Vec<Point>,
    pub movable: Vec<bool>,
    pub kinds: Vec<VertexKind>,
    /// (tail, head, flow) with flow > 0.
    pub edges: Vec<(usize, usize, f64)>,
}

impl WorkGraph {
    pub fn cost(&self, alpha: f64) -> f64 {
        self.edges
            .iter()
            .map(|&(t, h, f)| f.powf(alpha) * self.positions[t].dist(&self.positions[h]))
            .sum()
    }
}

/// Builds the embedded graph for `topo` over the given atoms. Flows are the
/// conservation-induced subtree sums; returns None when some tree of the
/// forest is not balanced, i.e. the masses do not permit this skeleton.
pub(crate) fn instantiate(
    topo: &Topology,
    sources: &[Atom],
    sinks: &[Atom],
) -> Result<Option<WorkGraph>> {
    let mut graph = WorkGraph {
        positions: Vec::new(),
        movable: Vec::new(),
        kinds: Vec::new(),
        edges: Vec::new(),
    };
    for tree in &topo.trees {
        // Local node table: leaves then branches.
        let mut local: Vec<TopoNode> = Vec::new();
        let find = |n: TopoNode, local: &mut Vec<TopoNode>| -> usize {
            if let Some(i) = local.iter().position(|m| *m == n) {
                i
            } else {
                local.push(n);
                local.len() - 1
            }
        };
        let mut edges_local: Vec<(usize, usize)> = Vec::new();
        for (a, b) in &tree.edges {
            let ia = find(*a, &mut local);
            let ib = find(*b, &mut local);
            edges_local.push((ia, ib));
        }
        let n = local.len();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (edge idx, other node)
        for (i, &(a, b)) in edges_local.iter().enumerate() {
            adj[a].push((i, b));
            adj[b].push((i, a));
        }
        let supply = |node: &TopoNode| -> f64 {
            match node {
                TopoNode::Leaf(LeafId::Source(i)) => sources[*i].mass,
                TopoNode::Leaf(LeafId::Sink(j)) => -sinks[*j].mass,
                TopoNode::Branch(_) => 0.0,
            }
        };
        let atom_pos = |node: &TopoNode| -> Option<Point> {
            match node {
                TopoNode::Leaf(LeafId::Source(i)) => Some(sources[*i].position.clone()),
                TopoNode::Leaf(LeafId::Sink(j)) => Some(sinks[*j].position.clone()),
                TopoNode::Branch(_) => None,
            }
        };
        // Signed flow toward the root accumulated bottom-up so that
        // conservation holds exactly at every branch vertex.
        let root = 0usize;
        let mut order: Vec<usize> = Vec::with_capacity(n); // post-order
        let mut parent_edge: Vec<Option<usize>> = vec![None; n];
        let mut parent: Vec<usize> = vec![usize::MAX; n];
        let mut stack = vec![(root, usize::MAX)];
        let mut seen = vec![false; n];
        while let Some((v, from)) = stack.pop() {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            order.push(v);
            for &(ei, w) in &adj[v] {
                if w != from && !seen[w] {
                    parent[w] = v;
                    parent_edge[w] = Some(ei);
                    stack.push((w, v));
                }
            }
        }
        let mut below: Vec<f64> = (0..n).map(|v| supply(&local[v])).collect();
        for &v in order.iter().rev() {
            if parent[v] != usize::MAX {
                below[parent[v]] += below[v];
            }
        }
        if below[root] != 0.0 && below[root].abs() > FLOW_DROP_TOL {
            return Ok(None); // unbalanced tree: masses do not permit it
        }
        // Edge flows: net supply of the subtree below, oriented so the
        // flow runs from the supplying side toward the demanding side.
        let mut signed: Vec<f64> = vec![0.0; edges_local.len()];
        for v in 0..n {
            if let Some(ei) = parent_edge[v] {
                signed[ei] = below[v]; // positive: subtree exports toward parent
            }
        }
        let dim = sources
            .first()
            .map(|a| a.position.dim())
            .or_else(|| sinks.first().map(|a| a.position.dim()))
            .unwrap_or(2);
        let centroid = {
            let pts: Vec<Point> = local.iter().filter_map(|n| atom_pos(n)).collect();
            let mut c = vec![0.0; dim];
            for p in &pts {
                for (k, x) in p.coords.iter().enumerate() {
                    c[k] += x;
                }
            }
            for x in c.iter_mut() {
                *x /= pts.len().max(1) as f64;
            }
            Point::new(c)
        };
        let base = graph.positions.len();
        for node in &local {
            match atom_pos(node) {
                Some(p) => {
                    graph.positions.push(p);
                    graph.movable.push(false);
                    graph.kinds.push(VertexKind::Boundary);
                }
                None => {
                    graph.positions.push(centroid.clone());
                    graph.movable.push(true);
                    graph.kinds.push(VertexKind::Branch);
                }
            }
        }
        for (i, &(a, b)) in edges_local.iter().enumerate() {
            let f = signed[i];
            let (child, par) = if parent_edge[a] == Some(i) {
                (a, b)
            } else {
                (b, a)
            };
            if f.abs() <= FLOW_DROP_TOL {
                continue;
            }
            let (tail, head, flow) = if f > 0.0 {
                (child, par, f)
            } else {
                (par, child, -f)
            };
            graph.edges.push((base + tail, base + head, flow));
        }
    }
    smooth_pass_through_branches(&mut graph);
    Ok(Some(graph))
}

/// Removes branch vertices of degree 2 (left over after zero-flow edges are
/// dropped) by splicing their incident edges, and of degree 0.
fn smooth_pass_through_branches(graph: &mut WorkGraph) {
    loop {
        let n = graph.positions.len();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &(t, h, _)) in graph.edges.iter().enumerate() {
            incident[t].push(i);
            incident[h].push(i);
        }
        let target =
            (0..n).find(|&v| graph.kinds[v] == VertexKind::Branch && incident[v].len() == 2);
        let Some(v) = target else { break };
        let (e1, e2) = (incident[v][0], incident[v][1]);
        let (t1, h1, f1) = graph.edges[e1];
        let (t2, h2, _f2) = graph.edges[e2];
        // conservation means the two flows agree; splice through v
        if h1 == v && t2 == v {
            graph.edges[e1] = (t1, h2, f1);
            graph.edges.remove(e2);
        } else if h2 == v && t1 == v {
            graph.edges[e1] = (t2, h1, f1);
            graph.edges.remove(e2);
        } else {
            // both in or both out: a conserving degree-2 branch cannot carry
            // positive flow that way, so the pair must be zero; discard it
            graph.edges.remove(e1.max(e2));
            graph.edges.remove(e1.min(e2));
        }
    }
}

pub(crate) struct RelaxOutcome {
    pub converged: bool,
    pub last_step: f64,
    /// Step size halfway through the budget; a last step well below this
    /// indicates genuine progress rather than a pinned crawl.
    pub mid_step: f64,
}

/// Sweeps of reweighted-median updates until branch positions settle.
/// Returns whether the sweep converged and the last step size; a stalled
/// run is resolved by the caller via collapse-and-re-relax.
///
/// Every sweep also tests whether the nearest neighbor of a branch vertex
/// dominates it (the kink condition of the weighted median); if so the
/// vertex snaps there exactly, avoiding the sublinear crawl that plain
/// iterations exhibit when the optimum sits on a terminal.
pub(crate) fn relax(graph: &mut WorkGraph, alpha: f64, cfg: &RelaxationConfig) -> RelaxOutcome {
    let n = graph.positions.len();
    let dim = graph.positions.first().map(|p| p.dim()).unwrap_or(2);
    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n]; // (vertex, weight)
    for &(t, h, f) in &graph.edges {
        let w = f.powf(alpha);
        neighbors[t].push((h, w));
        neighbors[h].push((t, w));
    }
    let movable: Vec<usize> = (0..n).filter(|&v| graph.movable[v]).collect();
    if movable.is_empty() {
        return RelaxOutcome {
            converged: true,
            last_step: 0.0,
            mid_step: 0.0,
        };
    }
    let mut mid_step = f64::INFINITY;
    // Harmonic pre-pass: plain neighbor averaging spreads the branch
    // vertices apart before the distance-weighted iterations begin.
    for _ in 0..200 {
        let mut shift = 0.0f64;
        for &v in &movable {
            if neighbors[v].is_empty() {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for &(u, _) in &neighbors[v] {
                for k in 0..dim {
                    mean[k] += graph.positions[u].coords[k];
                }
            }
            let next = Point::new(mean.iter().map(|x| x / neighbors[v].len() as f64).collect());
            shift = shift.max(next.dist(&graph.positions[v]));
            graph.positions[v] = next;
        }
        if shift < cfg.position_tol {
            break;
        }
    }
    for iter in 0..cfg.max_iterations {
        let mut max_step = 0.0f64;
        for &v in &movable {
            if neighbors[v].is_empty() {
                continue;
            }
            let before = graph.positions[v].clone();
            if let Some(anchor) = dominating_neighbor(graph, &neighbors[v], v, cfg.epsilon) {
                graph.positions[v] = graph.positions[anchor].clone();
                max_step = max_step.max(graph.positions[v].dist(&before));
                continue;
            }
            let mut num = vec![0.0; dim];
            let mut den = 0.0;
            for &(u, w) in &neighbors[v] {
                let d = graph.positions[v]
                    .dist(&graph.positions[u])
                    .max(cfg.epsilon);
                let coef = w / d;
                for k in 0..dim {
                    num[k] += coef * graph.positions[u].coords[k];
                }
                den += coef;
            }
            if den == 0.0 {
                continue;
            }
            graph.positions[v] = Point::new(num.iter().map(|x| x / den).collect());
            // Newton polish: the reweighted step alone converges with rate
            // approaching 1 in near-critical configurations.
            newton_polish(graph, &neighbors[v], v, cfg.epsilon);
            max_step = max_step.max(graph.positions[v].dist(&before));
        }
        if iter == cfg.max_iterations / 2 {
            mid_step = max_step;
        }
        if max_step < cfg.position_tol {
            return RelaxOutcome {
                converged: true,
                last_step: max_step,
                mid_step,
            };
        }
        if iter + 1 == cfg.max_iterations {
            return RelaxOutcome {
                converged: false,
                last_step: max_step,
                mid_step,
            };
        }
    }
    RelaxOutcome {
        converged: false,
        last_step: f64::NAN,
        mid_step,
    }
}

fn local_cost(graph: &WorkGraph, neighbors: &[(usize, f64)], x: &Point) -> f64 {
    neighbors
        .iter()
        .map(|&(u, w)| w * x.dist(&graph.positions[u]))
        .sum()
}

/// One safeguarded Newton step on the single-vertex objective
/// sum_i w_i |x - a_i|; accepted only if it strictly decreases the cost.
fn newton_polish(graph: &mut WorkGraph, neighbors: &[(usize, f64)], v: usize, epsilon: f64) {
    let dim = graph.positions[v].dim();
    let x = graph.positions[v].clone();
    let mut grad = vec![0.0; dim];
    let mut hess = vec![vec![0.0; dim]; dim];
    for &(u, w) in neighbors {
        let a = &graph.positions[u];
        let d = x.dist(a).max(epsilon);
        let unit: Vec<f64> = (0..dim).map(|k| (x.coords[k] - a.coords[k]) / d).collect();
        for k in 0..dim {
            grad[k] += w * unit[k];
            for l in 0..dim {
                let delta = if k == l { 1.0 } else { 0.0 };
                hess[k][l] += w / d * (delta - unit[k] * unit[l]);
            }
        }
    }
    let trace: f64 = (0..dim).map(|k| hess[k][k]).sum();
    for k in 0..dim {
        hess[k][k] += 1e-14 * trace.max(1e-300);
    }
    let Some(step) = solve_small(&mut hess, &grad) else {
        return;
    };
    let base = local_cost(graph, neighbors, &x);
    let mut scale = 1.0;
    for _ in 0..8 {
        let trial = Point::new((0..dim).map(|k| x.coords[k] - scale * step[k]).collect());
        if local_cost(graph, neighbors, &trial) < base {
            graph.positions[v] = trial;
            return;
        }
        scale *= 0.5;
    }
}

/// Gaussian elimination for the tiny (2x2 or 3x3) Newton systems.
fn solve_small(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        for k in col + 1..n {
            x[col] -= a[col][k] * x[k];
        }
        x[col] /= a[col][col];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// If placing `v` exactly at its nearest neighbor satisfies the weighted
/// median optimality condition there, returns that neighbor. Snapping onto
/// a terminal ends the sublinear crawl of boundary-critical optima; snapping
/// onto another branch vertex lets the pruning pass merge the pair into a
/// higher-degree vertex that keeps relaxing.
fn dominating_neighbor(
    graph: &WorkGraph,
    neighbors: &[(usize, f64)],
    v: usize,
    epsilon: f64,
) -> Option<usize> {
    let anchor = neighbors
        .iter()
        .min_by(|a, b| {
            graph.positions[v]
                .dist(&graph.positions[a.0])
                .total_cmp(&graph.positions[v].dist(&graph.positions[b.0]))
        })?
        .0;
    if graph.positions[v].dist(&graph.positions[anchor]) <= epsilon {
        return Some(anchor); // already there; stay put
    }
    let dim = graph.positions[anchor].dim();
    let mut pull = vec![0.0; dim];
    let mut threshold = 0.0;
    for &(u, w) in neighbors {
        let d = graph.positions[u].dist(&graph.positions[anchor]);
        if d <= epsilon {
            threshold += w; // mass sitting at the anchor strengthens the kink
            continue;
        }
        for k in 0..dim {
            pull[k] += w * (graph.positions[u].coords[k] - graph.positions[anchor].coords[k]) / d;
        }
    }
    let norm = pull.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm <= threshold + 1e-12).then_some(anchor)
}

/// Full pipeline: relax, collapse vanished edges and coincident branch
/// pairs, and re-relax the merged graph until nothing changes. Stalled
/// iterations whose graph cannot shrink any further are a genuine
/// convergence failure.
pub(crate) fn relax_and_prune(
    mut graph: WorkGraph,
    alpha: f64,
    cfg: &RelaxationConfig,
    collapse_len: f64,
) -> Result<TransportPath> {
    let mut stalled_rounds = 0;
    for _ in 0..16 {
        let cost_before = graph.cost(alpha);
        let outcome = relax(&mut graph, alpha, cfg);
        let cost_after = graph.cost(alpha);
        let path = prune(&graph, collapse_len)?;
        let shrunk =
            path.vertices().len() < graph.positions.len() || path.edges().len() < graph.edges.len();
        if shrunk {
            stalled_rounds = 0;
            graph = workgraph_from_path(&path);
            continue;
        }
        if outcome.converged {
            return Ok(path);
        }
        // Flat valley: positions still drift but the value is settled; the
        // cost moved less than 1e-12 relative across an entire round.
        if (cost_before - cost_after).abs() <= 1e-12 * (1.0 + cost_after.abs()) {
            return Ok(path);
        }
        stalled_rounds += 1;
        if stalled_rounds >= 4 {
            return Err(Error::ConvergenceFailure {
                iterations: cfg.max_iterations,
                last_step: outcome.last_step,
                best: Box::new(path),
            });
        }
        // Steps still shrinking: a slowly converging run that merely ran out
        // of budget; keep granting rounds while progress is geometric.
        if outcome.last_step < 0.5 * outcome.mid_step {
            continue;
        }
        // Pinned steps: monotone descent means the crawl is constrained by
        // a near-critical kink — a branch pair or branch-terminal pair with
        // a vanishing edge between them. Collapse the shortest such edge and
        // re-relax the merged graph.
        let shortest_movable_edge = graph
            .edges
            .iter()
            .filter(|&&(t, h, _)| graph.movable[t] || graph.movable[h])
            .map(|&(t, h, _)| graph.positions[t].dist(&graph.positions[h]))
            .fold(f64::INFINITY, f64::min);
        let boosted = (10.0 * outcome.last_step)
            .max(shortest_movable_edge * (1.0 + 1e-9))
            .max(collapse_len)
            .min(1e4 * collapse_len);
        let path = prune(&graph, boosted)?;
        let shrunk =
            path.vertices().len() < graph.positions.len() || path.edges().len() < graph.edges.len();
        if shrunk {
            graph = workgraph_from_path(&path);
            continue;
        }
        return Err(Error::ConvergenceFailure {
            iterations: cfg.max_iterations,
            last_step: outcome.last_step,
            best: Box::new(path),
        });
    }
    prune(&graph, collapse_len)
}

pub(crate) fn workgraph_from_path(path: &TransportPath) -> WorkGraph {
    WorkGraph {
        positions: path.vertices().iter().map(|v| v.position.clone()).collect(),
        movable: path
            .vertices()
            .iter()
            .map(|v| v.kind == VertexKind::Branch)
            .collect(),
        kinds: path.vertices().iter().map(|v| v.kind).collect(),
        edges: path
            .edges()
            .iter()
            .map(|e| (e.tail, e.head, e.flow))
            .collect(),
    }
}

/// Collapses vanishing edges (branch vertices that migrated onto terminals
/// or onto each other) and builds the canonical transport path.
pub(crate) fn prune(graph: &WorkGraph, collapse_len: f64) -> Result<TransportPath> {
    let n = graph.positions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(t, h, _) in &graph.edges {
        let len = graph.positions[t].dist(&graph.positions[h]);
        if len > collapse_len {
            continue;
        }
        let both_fixed = !graph.movable[t] && !graph.movable[h];
        if both_fixed {
            continue; // a genuinely short edge between distinct atoms
        }
        let (a, b) = (find(&mut parent, t), find(&mut parent, h));
        if a == b {
            continue;
        }
        // boundary representative wins, then the smaller index
        let rep = match (graph.movable[a], graph.movable[b]) {
            (false, _) => a,
            (_, false) => b,
            _ => a.min(b),
        };
        let other = if rep == a { b } else { a };
        parent[other] = rep;
    }
    let mut vertices = Vec::new();
    let mut remap = vec![usize::MAX; n];
    let mut edges = Vec::new();
    for &(t, h, f) in &graph.edges {
        let (a, b) = (find(&mut parent, t), find(&mut parent, h));
        if a == b {
            continue; // collapsed edge
        }
        for r in [a, b] {
            if remap[r] == usize::MAX {
                remap[r] = vertices.len();
                vertices.push(Vertex {
                    position: graph.positions[r].clone(),
                    kind: graph.kinds[r],
                });
            }
        }
        edges.push(Edge {
            tail: remap[a],
            head: remap[b],
            flow: f,
        });
    }
    TransportPath::new(vertices, edges)
}

/// Relaxes the branch-vertex positions of `topo` over the given atoms and
/// returns the pruned transport path. Errors when the topology's
/// conservation-induced flows are infeasible for these masses.
pub fn relax_positions(
    topo: &Topology,
    sources: &AtomicMeasure,
    sinks: &AtomicMeasure,
    alpha: f64,
    cfg: &RelaxationConfig,
) -> Result<TransportPath> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let graph = instantiate(topo, &sources.atoms, &sinks.atoms)?.ok_or_else(|| {
        Error::InvalidParameter("topology is not balanced for these atom masses".into())
    })?;
    let diam = spread(&graph.positions).max(1e-300);
    relax_and_prune(graph, alpha, cfg, COLLAPSE_REL_TOL * diam)
}

/// Diameter of the bounding box of a point set.
pub(crate) fn spread(points: &[Point]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let dim = first.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for k in 0..dim {
            lo[k] = lo[k].min(p.coords[k]);
            hi[k] = hi[k].max(p.coords[k]);
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
}
