//! Abstract tree/forest skeletons connecting labeled boundary atoms through
//! degree-3 branch vertices, and their exhaustive enumeration at oracle scale.

use crate::error::{Error, Result};

/// A boundary atom slot: index into the source or sink atom list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LeafId {
    Source(usize),
    Sink(usize),
}

impl LeafId {
    fn code(&self) -> i64 {
        match self {
            LeafId::Source(i) => *i as i64 + 1,
            LeafId::Sink(j) => -(*j as i64 + 1),
        }
    }
}

/// Node of a tree skeleton: a labeled leaf or an unlabeled branch vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopoNode {
    Leaf(LeafId),
    Branch(usize),
}

/// A full Steiner tree skeleton: leaves have degree 1, branch vertices
/// degree 3. A two-leaf tree is a direct edge with no branch vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoTree {
    pub leaves: Vec<LeafId>,
    pub n_branches: usize,
    pub edges: Vec<(TopoNode, TopoNode)>,
}

/// A forest of full tree skeletons over disjoint groups of boundary atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub trees: Vec<TopoTree>,
}

impl Topology {
    pub fn n_branches(&self) -> usize {
        self.trees.iter().map(|t| t.n_branches).sum()
    }

    /// Canonical encoding used for deterministic tie-breaking among
    /// equal-cost candidates: branch labels are rewritten in breadth-first
    /// order from the smallest leaf, edges sorted, trees sorted.
    pub fn canonical_key(&self) -> Vec<(i64, i64)> {
        let mut tree_keys: Vec<Vec<(i64, i64)>> = self
            .trees
            .iter()
            .map(|t| {
                let mut adj: Vec<Vec<TopoNode>> = Vec::new();
                let mut nodes: Vec<TopoNode> = Vec::new();
                let index_of = |n: TopoNode, nodes: &mut Vec<TopoNode>| {
                    if let Some(i) = nodes.iter().position(|m| *m == n) {
                        i
                    } else {
                        nodes.push(n);
                        nodes.len() - 1
                    }
                };
                let mut pairs = Vec::new();
                for (a, b) in &t.edges {
                    let ia = index_of(*a, &mut nodes);
                    let ib = index_of(*b, &mut nodes);
                    pairs.push((ia, ib));
                }
                for _ in 0..nodes.len() {
                    adj.push(Vec::new());
                }
                for (ia, ib) in &pairs {
                    adj[*ia].push(nodes[*ib]);
                    adj[*ib].push(nodes[*ia]);
                }
                // BFS from the smallest leaf, relabeling branches on discovery.
                let start = t
                    .leaves
                    .iter()
                    .min()
                    .map(|l| TopoNode::Leaf(*l))
                    .expect("tree has leaves");
                let start_idx = nodes.iter().position(|n| *n == start).unwrap();
                let mut relabel = vec![None; nodes.len()];
                let mut next_branch = 0i64;
                let mut queue = std::collections::VecDeque::from([start_idx]);
                let mut seen = vec![false; nodes.len()];
                seen[start_idx] = true;
                while let Some(i) = queue.pop_front() {
                    if let TopoNode::Branch(_) = nodes[i] {
                        relabel[i] = Some(next_branch);
                        next_branch += 1;
                    }
                    let mut neighbors: Vec<usize> = adj[i]
                        .iter()
                        .map(|n| nodes.iter().position(|m| m == n).unwrap())
                        .collect();
                    neighbors.sort_by_key(|&j| match nodes[j] {
                        TopoNode::Leaf(l) => (0, l.code()),
                        TopoNode::Branch(b) => (1, b as i64),
                    });
                    for j in neighbors {
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
                let coded = |i: usize| -> i64 {
                    match nodes[i] {
                        TopoNode::Leaf(l) => l.code(),
                        TopoNode::Branch(_) => {
                            1_000_000 + relabel[i].expect("branch visited by BFS")
                        }
                    }
                };
                let mut key: Vec<(i64, i64)> = pairs
                    .iter()
                    .map(|(a, b)| {
                        let (x, y) = (coded(*a), coded(*b));
                        (x.min(y), x.max(y))
                    })
                    .collect();
                key.sort_unstable();
                key
            })
            .collect();
        tree_keys.sort();
        tree_keys.into_iter().flatten().collect()
    }
}

/// Full tree shapes on `n` local leaves (codes 0..n; branch j coded -(j+1)),
/// generated by the classical edge-insertion recursion. There are (2n-5)!!
/// of them for n >= 3 and exactly one for n = 2.
pub(crate) fn full_shapes(n: usize) -> Vec<Vec<(i64, i64)>> {
    assert!(n >= 2);
    if n == 2 {
        return vec![vec![(0, 1)]];
    }
    let mut shapes = vec![vec![(0, -1), (1, -1), (2, -1)]];
    for leaf in 3..n {
        let mut grown = Vec::with_capacity(shapes.len() * (2 * leaf - 3));
        let new_branch = -(leaf as i64 - 1);
        for shape in &shapes {
            for (i, &(a, b)) in shape.iter().enumerate() {
                let mut next = shape.clone();
                next[i] = (a, new_branch);
                next.push((new_branch, b));
                next.push((leaf as i64, new_branch));
                grown.push(next);
            }
        }
        shapes = grown;
    }
    shapes
}

pub(crate) fn shape_to_tree(shape: &[(i64, i64)], leaves: &[LeafId]) -> TopoTree {
    let decode = |c: i64| -> TopoNode {
        if c >= 0 {
            TopoNode::Leaf(leaves[c as usize])
        } else {
            TopoNode::Branch((-c - 1) as usize)
        }
    };
    TopoTree {
        leaves: leaves.to_vec(),
        n_branches: if leaves.len() >= 3 {
            leaves.len() - 2
        } else {
            0
        },
        edges: shape.iter().map(|&(a, b)| (decode(a), decode(b))).collect(),
    }
}

/// Partitions of the atom list into blocks that each contain at least one
/// source and one sink. Blocks are opened canonically by their first atom.
fn valid_partitions(atoms: &[LeafId]) -> Vec<Vec<Vec<LeafId>>> {
    fn recurse(
        atoms: &[LeafId],
        idx: usize,
        blocks: &mut Vec<Vec<LeafId>>,
        out: &mut Vec<Vec<Vec<LeafId>>>,
    ) {
        if idx == atoms.len() {
            let ok = blocks.iter().all(|b| {
                b.iter().any(|l| matches!(l, LeafId::Source(_)))
                    && b.iter().any(|l| matches!(l, LeafId::Sink(_)))
            });
            if ok {
                out.push(blocks.clone());
            }
            return;
        }
        for i in 0..blocks.len() {
            blocks[i].push(atoms[idx]);
            recurse(atoms, idx + 1, blocks, out);
            blocks[i].pop();
        }
        blocks.push(vec![atoms[idx]]);
        recurse(atoms, idx + 1, blocks, out);
        blocks.pop();
    }
    let mut out = Vec::new();
    let mut blocks = Vec::new();
    recurse(atoms, 0, &mut blocks, &mut out);
    out
}

/// Enumerates every candidate skeleton for transporting `n_sources` source
/// atoms to `n_sinks` sink atoms: disjoint balanced groups (mass feasibility
/// is checked at instantiation), each connected by a full tree skeleton, with
/// at most `max_branch` branch vertices overall. Each skeleton is emitted
/// exactly once up to relabeling of branch vertices.
pub fn enumerate_topologies(
    n_sources: usize,
    n_sinks: usize,
    max_branch: usize,
    oracle_limit: usize,
) -> Result<Vec<Topology>> {
    let atoms_total = n_sources + n_sinks;
    if atoms_total > oracle_limit {
        return Err(Error::OracleTooLarge {
            atoms: atoms_total,
            limit: oracle_limit,
        });
    }
    if n_sources == 0 || n_sinks == 0 {
        return Ok(Vec::new());
    }
    let atoms: Vec<LeafId> = (0..n_sources)
        .map(LeafId::Source)
        .chain((0..n_sinks).map(LeafId::Sink))
        .collect();
    let mut out = Vec::new();
    for partition in valid_partitions(&atoms) {
        // Cartesian product of per-block shapes, respecting the branch cap.
        let per_block: Vec<Vec<TopoTree>> = partition
            .iter()
            .map(|block| {
                full_shapes(block.len())
                    .iter()
                    .map(|s| shape_to_tree(s, block))
                    .collect()
            })
            .collect();
        let mut stack: Vec<Topology> = vec![Topology { trees: Vec::new() }];
        for block_trees in &per_block {
            let mut next = Vec::with_capacity(stack.len() * block_trees.len());
            for partial in &stack {
                for tree in block_trees {
                    let mut topo = partial.clone();
                    topo.trees.push(tree.clone());
                    if topo.n_branches() <= max_branch {
                        next.push(topo);
                    }
                }
            }
            stack = next;
        }
        out.extend(stack);
    }
    Ok(out)
}
