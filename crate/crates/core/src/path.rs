//! Embedded directed weighted graphs with flow conservation: the discrete
//! transport paths, their boundary, masses, energies and validity checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Atom, AtomicMeasure, Point, SignedAtomicMeasure, MASS_DROP_TOL};

/// Absolute tolerance on the divergence at branch vertices.
pub const CONSERVATION_TOL: f64 = 1e-9;
/// Edges with net flow at or below this are dropped during canonicalization.
pub const FLOW_DROP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Boundary,
    Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub position: Point,
    pub kind: VertexKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub flow: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct PathData {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
}

/// A transport path: straight edges with positive flow, conservation at
/// branch vertices. Immutable once constructed; construction canonicalizes
/// the edge set (parallel edges merged, anti-parallel flows cancelled,
/// near-zero flows and isolated vertices dropped, edges sorted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathData", into = "PathData")]
pub struct TransportPath {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
}

impl TryFrom<PathData> for TransportPath {
    type Error = Error;
    fn try_from(d: PathData) -> Result<Self> {
        TransportPath::new(d.vertices, d.edges)
    }
}

impl From<TransportPath> for PathData {
    fn from(p: TransportPath) -> Self {
        PathData {
            vertices: p.vertices,
            edges: p.edges,
        }
    }
}

impl Default for TransportPath {
    fn default() -> Self {
        TransportPath::empty()
    }
}

impl TransportPath {
    pub fn empty() -> Self {
        TransportPath {
            vertices: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Result<Self> {
        let dim = vertices.first().map(|v| v.position.dim());
        for v in &vertices {
            if !v.position.is_finite() {
                return Err(Error::InvalidPath("non-finite vertex position".into()));
            }
            if Some(v.position.dim()) != dim {
                return Err(Error::InvalidPath("inconsistent vertex dimensions".into()));
            }
        }
        // Net out parallel and anti-parallel edges per unordered vertex pair.
        let mut net: Vec<((usize, usize), f64)> = Vec::new();
        for e in &edges {
            if e.tail >= vertices.len() || e.head >= vertices.len() {
                return Err(Error::InvalidPath(format!(
                    "edge ({}, {}) references missing vertex",
                    e.tail, e.head
                )));
            }
            if e.tail == e.head {
                return Err(Error::InvalidPath("self-loop edge".into()));
            }
            if !e.flow.is_finite() || e.flow <= 0.0 {
                return Err(Error::InvalidPath(format!("non-positive flow {}", e.flow)));
            }
            let (key, signed) = if e.tail < e.head {
                ((e.tail, e.head), e.flow)
            } else {
                ((e.head, e.tail), -e.flow)
            };
            match net.iter_mut().find(|(k, _)| *k == key) {
                Some((_, f)) => *f += signed,
                None => net.push((key, signed)),
            }
        }
        let mut canonical: Vec<Edge> = Vec::with_capacity(net.len());
        for ((a, b), f) in net {
            if f.abs() <= FLOW_DROP_TOL {
                continue;
            }
            let (tail, head, flow) = if f > 0.0 { (a, b, f) } else { (b, a, -f) };
            if vertices[tail].position.same_site(&vertices[head].position) {
                return Err(Error::InvalidPath(
                    "edge endpoints occupy the same position".into(),
                ));
            }
            canonical.push(Edge { tail, head, flow });
        }
        // Drop isolated vertices and re-index.
        let mut used = vec![false; vertices.len()];
        for e in &canonical {
            used[e.tail] = true;
            used[e.head] = true;
        }
        let mut remap = vec![usize::MAX; vertices.len()];
        let mut kept = Vec::new();
        for (i, v) in vertices.into_iter().enumerate() {
            if used[i] {
                remap[i] = kept.len();
                kept.push(v);
            }
        }
        for e in canonical.iter_mut() {
            e.tail = remap[e.tail];
            e.head = remap[e.head];
        }
        canonical.sort_by_key(|e| (e.tail, e.head));
        Ok(TransportPath {
            vertices: kept,
            edges: canonical,
        })
    }

    pub fn single_edge(from: Point, to: Point, flow: f64) -> Result<Self> {
        TransportPath::new(
            vec![
                Vertex {
                    position: from,
                    kind: VertexKind::Boundary,
                },
                Vertex {
                    position: to,
                    kind: VertexKind::Boundary,
                },
            ],
            vec![Edge {
                tail: 0,
                head: 1,
                flow,
            }],
        )
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge_length(&self, e: &Edge) -> f64 {
        self.vertices[e.tail]
            .position
            .dist(&self.vertices[e.head].position)
    }

    /// Signed divergence at each vertex: inflow minus outflow.
    pub fn divergences(&self) -> Vec<f64> {
        let mut div = vec![0.0; self.vertices.len()];
        for e in &self.edges {
            div[e.head] += e.flow;
            div[e.tail] -= e.flow;
        }
        div
    }

    /// The boundary as a signed measure: sinks (positive divergence) minus
    /// sources. Fails if flow conservation is violated at a branch vertex.
    pub fn boundary(&self) -> Result<SignedAtomicMeasure> {
        let div = self.divergences();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (v, d) in self.vertices.iter().zip(&div) {
            match v.kind {
                VertexKind::Branch => {
                    if d.abs() > CONSERVATION_TOL {
                        return Err(Error::InvalidPath(format!(
                            "flow conservation violated at branch vertex {:?} (divergence {:.3e})",
                            v.position.coords, d
                        )));
                    }
                }
                VertexKind::Boundary => {
                    if *d > MASS_DROP_TOL {
                        pos.push(Atom::new(v.position.clone(), *d));
                    } else if *d < -MASS_DROP_TOL {
                        neg.push(Atom::new(v.position.clone(), -d));
                    }
                }
            }
        }
        SignedAtomicMeasure::new(AtomicMeasure { atoms: pos }, AtomicMeasure { atoms: neg })
    }

    /// The concave transport cost: sum of flow^alpha times edge length.
    pub fn m_alpha(&self, alpha: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1), got {alpha}"
            )));
        }
        Ok(self
            .edges
            .iter()
            .map(|e| e.flow.powf(alpha) * self.edge_length(e))
            .sum())
    }

    /// Total mass: sum of flow times edge length.
    pub fn mass(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.flow * self.edge_length(e))
            .sum()
    }

    /// Transport cost minus boundary payoff.
    pub fn energy(&self, payoff: &PayoffSpec, alpha: f64) -> Result<f64> {
        let cost = self.m_alpha(alpha)?;
        let boundary = self.boundary()?;
        let mut gain = 0.0;
        for a in &boundary.positive.atoms {
            gain += payoff.sink_value(&a.position)? * a.mass;
        }
        for a in &boundary.negative.atoms {
            gain -= payoff.source_value(&a.position)? * a.mass;
        }
        Ok(cost - gain)
    }

    /// Constant-payoff energy: m_alpha minus c times the boundary mass.
    pub fn energy_const(&self, c: f64, alpha: f64) -> Result<f64> {
        let cost = self.m_alpha(alpha)?;
        let boundary = self.boundary()?;
        Ok(cost - c * boundary.total_variation())
    }

    /// True iff the directed positive-flow graph has no cycle.
    pub fn is_acyclic(&self) -> bool {
        let n = self.vertices.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.tail].push(i);
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        for start in 0..n {
            if state[start] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            state[start] = 1;
            while let Some(&mut (v, ref mut idx)) = stack.last_mut() {
                if *idx < out[v].len() {
                    let next = self.edges[out[v][*idx]].head;
                    *idx += 1;
                    match state[next] {
                        0 => {
                            state[next] = 1;
                            stack.push((next, 0));
                        }
                        1 => return false,
                        _ => {}
                    }
                } else {
                    state[v] = 2;
                    stack.pop();
                }
            }
        }
        true
    }

    /// Partition into weakly connected components of the positive-flow
    /// subgraph, ordered by smallest touched vertex index.
    pub fn connected_components(&self) -> Vec<TransportPath> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let a = find(&mut parent, e.tail);
            let b = find(&mut parent, e.head);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut roots: Vec<usize> = Vec::new();
        for e in &self.edges {
            let r = find(&mut parent, e.tail);
            if !roots.contains(&r) {
                roots.push(r);
            }
        }
        roots.sort_unstable();
        roots
            .into_iter()
            .map(|root| {
                let mut remap = vec![usize::MAX; n];
                let mut vertices = Vec::new();
                let mut edges = Vec::new();
                for e in &self.edges {
                    if find(&mut parent, e.tail) != root {
                        continue;
                    }
                    for endpoint in [e.tail, e.head] {
                        if remap[endpoint] == usize::MAX {
                            remap[endpoint] = vertices.len();
                            vertices.push(self.vertices[endpoint].clone());
                        }
                    }
                    edges.push(Edge {
                        tail: remap[e.tail],
                        head: remap[e.head],
                        flow: e.flow,
                    });
                }
                TransportPath::new(vertices, edges).expect("component of a valid path is valid")
            })
            .collect()
    }

    /// Checks `M(T) <= (M(dT)/2)^(1-alpha) * M_alpha(T)`, the mass bound
    /// satisfied by optimal paths.
    pub fn mass_bound_holds(&self, alpha: f64) -> Result<bool> {
        let cost = self.m_alpha(alpha)?;
        let tv = self.boundary()?.total_variation();
        Ok(self.mass() <= (tv / 2.0).powf(1.0 - alpha) * cost + 1e-9)
    }

    /// Edge-disjoint union of two paths (vertices at the same site merged).
    pub fn overlay(&self, other: &TransportPath) -> Result<TransportPath> {
        let mut vertices = self.vertices.clone();
        let mut edges = self.edges.clone();
        let mut remap = Vec::with_capacity(other.vertices.len());
        for v in &other.vertices {
            let existing = vertices
                .iter()
                .position(|w| w.position.same_site(&v.position));
            match existing {
                Some(i) => remap.push(i),
                None => {
                    remap.push(vertices.len());
                    vertices.push(v.clone());
                }
            }
        }
        for e in &other.edges {
            edges.push(Edge {
                tail: remap[e.tail],
                head: remap[e.head],
                flow: e.flow,
            });
        }
        TransportPath::new(vertices, edges)
    }
}

/// Boundary payoff: either a single constant c (payoff 2c at sinks, 0 at
/// sources) or explicit per-atom values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffSpec {
    ConstantC {
        c: f64,
    },
    PerAtom {
        sources: Vec<(Point, f64)>,
        sinks: Vec<(Point, f64)>,
    },
}

impl PayoffSpec {
    pub fn constant(c: f64) -> Self {
        PayoffSpec::ConstantC { c }
    }

    /// Per-atom payoff aligned with the atoms of `mu` and `nu`.
    pub fn per_atom(
        mu: &AtomicMeasure,
        nu: &AtomicMeasure,
        source_values: &[f64],
        sink_values: &[f64],
    ) -> Result<Self> {
        if source_values.len() != mu.atoms.len() || sink_values.len() != nu.atoms.len() {
            return Err(Error::InvalidParameter(
                "payoff values do not cover the boundary atoms exactly".into(),
            ));
        }
        Ok(PayoffSpec::PerAtom {
            sources: mu
                .atoms
                .iter()
                .zip(source_values)
                .map(|(a, v)| (a.position.clone(), *v))
                .collect(),
            sinks: nu
                .atoms
                .iter()
                .zip(sink_values)
                .map(|(a, v)| (a.position.clone(), *v))
                .collect(),
        })
    }

    pub fn source_value(&self, p: &Point) -> Result<f64> {
        match self {
            PayoffSpec::ConstantC { .. } => Ok(0.0),
            PayoffSpec::PerAtom { sources, .. } => sources
                .iter()
                .find(|(q, _)| q.same_site(p))
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::PayoffDomain(p.coords.clone())),
        }
    }

    pub fn sink_value(&self, p: &Point) -> Result<f64> {
        match self {
            PayoffSpec::ConstantC { c } => Ok(2.0 * c),
            PayoffSpec::PerAtom { sinks, .. } => sinks
                .iter()
                .find(|(q, _)| q.same_site(p))
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::PayoffDomain(p.coords.clone())),
        }
    }

    /// Smallest payoff over the source atoms; None when there are no sources.
    pub fn min_source_value(&self, mu: &AtomicMeasure) -> Option<f64> {
        match self {
            PayoffSpec::ConstantC { .. } => {
                if mu.is_empty() {
                    None
                } else {
                    Some(0.0)
                }
            }
            PayoffSpec::PerAtom { sources, .. } => sources
                .iter()
                .map(|(_, v)| *v)
                .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v)))),
        }
    }

    /// Largest payoff over the sink atoms; None when there are no sinks.
    pub fn max_sink_value(&self, nu: &AtomicMeasure) -> Option<f64> {
        match self {
            PayoffSpec::ConstantC { c } => {
                if nu.is_empty() {
                    None
                } else {
                    Some(2.0 * c)
                }
            }
            PayoffSpec::PerAtom { sinks, .. } => sinks
                .iter()
                .map(|(_, v)| *v)
                .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v)))),
        }
    }
}
