//! The outer problem: search over feasible allocations of the source and
//! sink atoms, minimize transport cost minus boundary payoff, and extract
//! the per-component structure of the optimum.
//!
//! Certified mode enumerates disjoint groups of atoms (candidate connected
//! components), each fully used except for at most one partial atom on the
//! heavier side whose slack is fixed by balance. The group family is
//! exhaustive for optima by the atomic structure of solutions, which is
//! nevertheless re-verified on every certified report.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{SolveMode, SolverConfig};
use crate::dalpha::{heuristic_min_cost, quantize_measure};
use crate::error::{Error, Result};
use crate::measures::{Atom, AtomicMeasure, Point, SignedAtomicMeasure, MASS_TOL};
use crate::path::{PayoffSpec, TransportPath};
use crate::relax::{instantiate, relax_and_prune, spread, COLLAPSE_REL_TOL};
use crate::topology::{full_shapes, shape_to_tree, LeafId, Topology};

/// Energies within this window are considered tied and resolved by the
/// deterministic preference for smaller transported mass.
const TIE_TOL: f64 = 1e-9;
/// Tolerance on slack amounts when verifying component structure.
const SLACK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Source,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceClass {
    Balanced,
    OverSupply,
    OverDemand,
}

/// Used mass per atom, aligned with the normalized source and sink measures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub source_used: Vec<f64>,
    pub sink_used: Vec<f64>,
}

impl Allocation {
    pub fn zero(ns: usize, nk: usize) -> Self {
        Allocation {
            source_used: vec![0.0; ns],
            sink_used: vec![0.0; nk],
        }
    }

    pub fn transported_mass(&self) -> f64 {
        self.source_used.iter().sum()
    }

    /// The used part of `mu`.
    pub fn mu_star(&self, mu: &AtomicMeasure) -> AtomicMeasure {
        measure_from_used(&mu.atoms, &self.source_used)
    }

    /// The used part of `nu`.
    pub fn nu_star(&self, nu: &AtomicMeasure) -> AtomicMeasure {
        measure_from_used(&nu.atoms, &self.sink_used)
    }
}

fn measure_from_used(atoms: &[Atom], used: &[f64]) -> AtomicMeasure {
    AtomicMeasure::new(
        atoms
            .iter()
            .zip(used)
            .filter(|(_, u)| **u > 0.0)
            .map(|(a, u)| Atom::new(a.position.clone(), *u))
            .collect(),
    )
    .expect("used masses are nonnegative")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    /// Indices of source atoms lying on the component.
    pub source_atoms: Vec<usize>,
    /// Indices of sink atoms lying on the component.
    pub sink_atoms: Vec<usize>,
    pub balance: BalanceClass,
    pub slack_atom: Option<(Side, usize)>,
    /// The unmoved mass at the slack atom (zero for balanced components).
    pub slack_amount: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub alpha: f64,
    pub path: TransportPath,
    pub allocation: Allocation,
    pub energy: f64,
    pub components: Vec<ComponentSummary>,
    pub certified: bool,
}

fn validate_payoff(mu: &AtomicMeasure, nu: &AtomicMeasure, h: &PayoffSpec) -> Result<()> {
    if let PayoffSpec::PerAtom { .. } = h {
        for a in &mu.atoms {
            h.source_value(&a.position)?;
        }
        for a in &nu.atoms {
            h.sink_value(&a.position)?;
        }
    }
    Ok(())
}

fn zero_report(mu: &AtomicMeasure, nu: &AtomicMeasure, alpha: f64) -> SolveReport {
    SolveReport {
        alpha,
        path: TransportPath::empty(),
        allocation: Allocation::zero(mu.atoms.len(), nu.atoms.len()),
        energy: 0.0,
        components: Vec::new(),
        certified: true,
    }
}

/// When no relocation can earn a positive net payoff the zero path is the
/// unique optimum and the search can be skipped.
pub fn solve_zero_shortcut(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
    alpha: f64,
) -> Option<SolveReport> {
    let min_src = h.min_source_value(mu);
    let max_snk = h.max_sink_value(nu);
    match (min_src, max_snk) {
        (None, _) | (_, None) => Some(zero_report(mu, nu, alpha)),
        (Some(lo), Some(hi)) if lo >= hi => Some(zero_report(mu, nu, alpha)),
        _ => None,
    }
}

/// One candidate group: atoms fully used except for an optional partial atom.
#[derive(Debug, Clone)]
struct Block {
    atoms: Vec<LeafId>,
    /// Used mass per atom, parallel to `atoms`.
    used: Vec<f64>,
}

impl Block {
    fn key(&self) -> (Vec<LeafId>, Vec<u64>) {
        let mut order: Vec<usize> = (0..self.atoms.len()).collect();
        order.sort_by_key(|&i| self.atoms[i]);
        (
            order.iter().map(|&i| self.atoms[i]).collect(),
            order.iter().map(|&i| self.used[i].to_bits()).collect(),
        )
    }
}

/// Minimum cost over full tree skeletons connecting exactly this block.
fn block_min_cost(
    block: &Block,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    alpha: f64,
    collapse: f64,
    cfg: &SolverConfig,
) -> Result<(f64, TransportPath)> {
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    let mut leaves = Vec::new();
    for (l, u) in block.atoms.iter().zip(&block.used) {
        match l {
            LeafId::Source(i) => {
                leaves.push(LeafId::Source(sources.len()));
                sources.push(Atom::new(mu.atoms[*i].position.clone(), *u));
            }
            LeafId::Sink(j) => {
                leaves.push(LeafId::Sink(sinks.len()));
                sinks.push(Atom::new(nu.atoms[*j].position.clone(), *u));
            }
        }
    }
    let mut best: Option<(f64, Vec<(i64, i64)>, TransportPath)> = None;
    for shape in full_shapes(leaves.len()) {
        let topo = Topology {
            trees: vec![shape_to_tree(&shape, &leaves)],
        };
        let Some(graph) = instantiate(&topo, &sources, &sinks)? else {
            continue;
        };
        let path = relax_and_prune(graph, alpha, &cfg.relaxation, collapse)?;
        let cost = path.m_alpha(alpha)?;
        let key = topo.canonical_key();
        let replace = match &best {
            None => true,
            Some((bc, bk, _)) => cost.total_cmp(bc).then_with(|| key.cmp(bk)).is_lt(),
        };
        if replace {
            best = Some((cost, key, path));
        }
    }
    best.map(|(c, _, p)| (c, p))
        .ok_or_else(|| Error::InvalidParameter("block admits no balanced skeleton".into()))
}

/// Enumerates collections of disjoint blocks over the atoms; each atom is
/// unused or belongs to one block, and blocks mix both sides.
fn enumerate_collections(atoms: &[LeafId]) -> Vec<Vec<Vec<LeafId>>> {
    fn recurse(
        atoms: &[LeafId],
        idx: usize,
        blocks: &mut Vec<Vec<LeafId>>,
        out: &mut Vec<Vec<Vec<LeafId>>>,
    ) {
        if idx == atoms.len() {
            if blocks.iter().all(|b| {
                b.iter().any(|l| matches!(l, LeafId::Source(_)))
                    && b.iter().any(|l| matches!(l, LeafId::Sink(_)))
            }) {
                out.push(blocks.clone());
            }
            return;
        }
        // unused
        recurse(atoms, idx + 1, blocks, out);
        // join an open block
        for i in 0..blocks.len() {
            blocks[i].push(atoms[idx]);
            recurse(atoms, idx + 1, blocks, out);
            blocks[i].pop();
        }
        // open a new block
        blocks.push(vec![atoms[idx]]);
        recurse(atoms, idx + 1, blocks, out);
        blocks.pop();
    }
    let mut out = Vec::new();
    recurse(atoms, 0, &mut Vec::new(), &mut out);
    out
}

/// Balance variants of a group: full use when balanced, otherwise one
/// partial atom on the heavier side with slack fixed by the imbalance.
fn block_variants(block_atoms: &[LeafId], mu: &AtomicMeasure, nu: &AtomicMeasure) -> Vec<Block> {
    let mass_of = |l: &LeafId| -> f64 {
        match l {
            LeafId::Source(i) => mu.atoms[*i].mass,
            LeafId::Sink(j) => nu.atoms[*j].mass,
        }
    };
    let imbalance: f64 = block_atoms
        .iter()
        .map(|l| match l {
            LeafId::Source(_) => mass_of(l),
            LeafId::Sink(_) => -mass_of(l),
        })
        .sum();
    let full: Vec<f64> = block_atoms.iter().map(|l| mass_of(l)).collect();
    if imbalance == 0.0 {
        return vec![Block {
            atoms: block_atoms.to_vec(),
            used: full,
        }];
    }
    let heavy_is_source = imbalance > 0.0;
    let slack = imbalance.abs();
    let mut variants = Vec::new();
    for (k, l) in block_atoms.iter().enumerate() {
        let on_heavy_side = matches!(l, LeafId::Source(_)) == heavy_is_source;
        if !on_heavy_side || full[k] <= slack {
            continue;
        }
        let mut used = full.clone();
        used[k] = full[k] - slack;
        variants.push(Block {
            atoms: block_atoms.to_vec(),
            used,
        });
    }
    variants
}

#[derive(Debug, Clone)]
struct Candidate {
    energy: f64,
    transported: f64,
    usage: Vec<f64>,
    block_ids: Vec<usize>,
}

fn payoff_gain(
    block: &Block,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
) -> Result<f64> {
    let mut gain = 0.0;
    for (l, u) in block.atoms.iter().zip(&block.used) {
        match l {
            LeafId::Source(i) => gain -= h.source_value(&mu.atoms[*i].position)? * u,
            LeafId::Sink(j) => gain += h.sink_value(&nu.atoms[*j].position)? * u,
        }
    }
    Ok(gain)
}

fn candidate_better(a: &Candidate, b: &Candidate) -> bool {
    if a.energy < b.energy - TIE_TOL {
        return true;
    }
    if a.energy > b.energy + TIE_TOL {
        return false;
    }
    if a.transported != b.transported {
        return a.transported < b.transported;
    }
    for (x, y) in a.usage.iter().zip(&b.usage) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

fn certified_search(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let ns = mu.atoms.len();
    let nk = nu.atoms.len();
    let atoms: Vec<LeafId> = (0..ns)
        .map(LeafId::Source)
        .chain((0..nk).map(LeafId::Sink))
        .collect();
    let collapse = collapse_scale(mu, nu, cfg);

    // Gather the distinct blocks across all collections, solve each once.
    let mut block_ids: HashMap<(Vec<LeafId>, Vec<u64>), usize> = HashMap::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    for collection in enumerate_collections(&atoms) {
        let variant_sets: Vec<Vec<Block>> = collection
            .iter()
            .map(|b| block_variants(b, mu, nu))
            .collect();
        if variant_sets.iter().any(|v| v.is_empty()) {
            continue;
        }
        let mut choice = vec![0usize; variant_sets.len()];
        loop {
            let mut ids = Vec::with_capacity(choice.len());
            for (set, &c) in variant_sets.iter().zip(&choice) {
                let block = &set[c];
                let id = *block_ids.entry(block.key()).or_insert_with(|| {
                    blocks.push(block.clone());
                    blocks.len() - 1
                });
                ids.push(id);
            }
            let mut usage = vec![0.0; ns + nk];
            for &id in &ids {
                let b = &blocks[id];
                for (l, u) in b.atoms.iter().zip(&b.used) {
                    match l {
                        LeafId::Source(i) => usage[*i] = *u,
                        LeafId::Sink(j) => usage[ns + *j] = *u,
                    }
                }
            }
            candidates.push(Candidate {
                energy: f64::NAN, // filled once block costs are known
                transported: usage[..ns].iter().sum(),
                usage,
                block_ids: ids,
            });
            // advance the cartesian product
            let mut k = 0;
            loop {
                if k == choice.len() {
                    break;
                }
                choice[k] += 1;
                if choice[k] < variant_sets[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == choice.len() {
                break;
            }
        }
    }

    let solved: Vec<(f64, TransportPath)> = blocks
        .par_iter()
        .map(|b| block_min_cost(b, mu, nu, alpha, collapse, cfg))
        .collect::<Result<Vec<_>>>()?;

    for cand in candidates.iter_mut() {
        let mut energy = 0.0;
        for &id in &cand.block_ids {
            energy += solved[id].0;
            energy -= payoff_gain(&blocks[id], mu, nu, h)?;
        }
        cand.energy = energy;
    }

    let mut best = Candidate {
        energy: 0.0,
        transported: 0.0,
        usage: vec![0.0; ns + nk],
        block_ids: Vec::new(),
    };
    for cand in candidates {
        if candidate_better(&cand, &best) {
            best = cand;
        }
    }

    let mut path = TransportPath::empty();
    for &id in &best.block_ids {
        path = path.overlay(&solved[id].1)?;
    }
    let allocation = Allocation {
        source_used: best.usage[..ns].to_vec(),
        sink_used: best.usage[ns..].to_vec(),
    };
    finish_report(mu, nu, h, alpha, path, allocation, best.energy, true)
}

fn collapse_scale(mu: &AtomicMeasure, nu: &AtomicMeasure, cfg: &SolverConfig) -> f64 {
    let pts: Vec<Point> = mu
        .atoms
        .iter()
        .chain(&nu.atoms)
        .map(|a| a.position.clone())
        .collect();
    let diam = cfg.domain_diam.unwrap_or_else(|| spread(&pts)).max(1e-300);
    COLLAPSE_REL_TOL * diam
}

fn finish_report(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
    alpha: f64,
    path: TransportPath,
    allocation: Allocation,
    energy: f64,
    certified: bool,
) -> Result<SolveReport> {
    let boundary = path.boundary()?;
    let target = SignedAtomicMeasure::difference(nu, mu)?;
    if !boundary.preceq(&target) {
        return Err(Error::StructureViolation(
            "solution boundary is not dominated by nu - mu".into(),
        ));
    }
    let recomputed = path.energy(h, alpha)?;
    if (recomputed - energy).abs() > 1e-9 * (1.0 + energy.abs()) {
        return Err(Error::StructureViolation(format!(
            "energy mismatch: search value {energy} vs path energy {recomputed}"
        )));
    }
    let mut report = SolveReport {
        alpha,
        path,
        allocation,
        energy,
        components: Vec::new(),
        certified,
    };
    report.components = component_summaries(&report, mu, nu, certified && alpha > 0.0)?;
    if certified && alpha > 0.0 && !perturbation_certificate(&report, mu, nu) {
        return Err(Error::StructureViolation(
            "perturbation certificate failed on a certified report".into(),
        ));
    }
    Ok(report)
}

/// Minimizes transport cost minus boundary payoff over all allocations
/// dominated by `mu` and `nu`.
pub fn solve(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let mu = quantize_measure(mu)?;
    let nu = quantize_measure(nu)?;
    if !mu.supports_disjoint(&nu) {
        return Err(Error::UnsupportedInput(
            "source and sink supports must be disjoint".into(),
        ));
    }
    validate_payoff(&mu, &nu, h)?;
    if let Some(report) = solve_zero_shortcut(&mu, &nu, h, alpha) {
        return Ok(report);
    }
    let count = mu.atoms.len() + nu.atoms.len();
    if count <= cfg.oracle_limit {
        certified_search(&mu, &nu, h, alpha, cfg)
    } else if cfg.mode == SolveMode::Heuristic {
        heuristic_search(&mu, &nu, h, alpha, cfg)
    } else {
        Err(Error::OracleTooLarge {
            atoms: count,
            limit: cfg.oracle_limit,
        })
    }
}

/// Runs the full allocation search even when the zero shortcut applies;
/// used to cross-validate the shortcut.
pub fn solve_without_shortcut(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let mu = quantize_measure(mu)?;
    let nu = quantize_measure(nu)?;
    if !mu.supports_disjoint(&nu) {
        return Err(Error::UnsupportedInput(
            "source and sink supports must be disjoint".into(),
        ));
    }
    validate_payoff(&mu, &nu, h)?;
    if mu.atoms.is_empty() || nu.atoms.is_empty() {
        return Ok(zero_report(&mu, &nu, alpha));
    }
    let count = mu.atoms.len() + nu.atoms.len();
    if count <= cfg.oracle_limit {
        certified_search(&mu, &nu, h, alpha, cfg)
    } else if cfg.mode == SolveMode::Heuristic {
        heuristic_search(&mu, &nu, h, alpha, cfg)
    } else {
        Err(Error::OracleTooLarge {
            atoms: count,
            limit: cfg.oracle_limit,
        })
    }
}

/// The optimal energy value.
pub fn energy_value(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    solve(mu, nu, h, alpha, cfg).map(|r| r.energy)
}

/// Smallest positive unused mass over the slack-structured allocation
/// family: the restricted version of the separation quantity s(mu, nu).
/// Informational; None when the family is empty of partial candidates.
pub(crate) fn restricted_unused_infimum(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Option<f64> {
    let ns = mu.atoms.len();
    let nk = nu.atoms.len();
    let atoms: Vec<LeafId> = (0..ns)
        .map(LeafId::Source)
        .chain((0..nk).map(LeafId::Sink))
        .collect();
    let total = mu.total_mass() + nu.total_mass();
    let mut best: Option<f64> = None;
    for collection in enumerate_collections(&atoms) {
        let variant_sets: Vec<Vec<Block>> = collection
            .iter()
            .map(|b| block_variants(b, mu, nu))
            .collect();
        if variant_sets.iter().any(|v| v.is_empty()) {
            continue;
        }
        // minimal unused mass is attained by maximizing used mass per block
        let used: f64 = variant_sets
            .iter()
            .map(|set| {
                set.iter()
                    .map(|b| b.used.iter().sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        let unused = total - used;
        if unused > 0.0 && best.map_or(true, |b| unused < b) {
            best = Some(unused);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Structure extraction and certificates
// ---------------------------------------------------------------------------

fn point_segment_dist(p: &Point, a: &Point, b: &Point) -> f64 {
    let dim = p.dim();
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for k in 0..dim {
        let d = b.coords[k] - a.coords[k];
        ab2 += d * d;
        ap_ab += (p.coords[k] - a.coords[k]) * d;
    }
    let t = if ab2 > 0.0 {
        (ap_ab / ab2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let proj: Vec<f64> = (0..dim)
        .map(|k| a.coords[k] + t * (b.coords[k] - a.coords[k]))
        .collect();
    p.dist(&Point::new(proj))
}

fn atom_on_component(p: &Point, comp: &TransportPath, tol: f64) -> bool {
    comp.vertices().iter().any(|v| v.position.same_site(p))
        || comp.edges().iter().any(|e| {
            point_segment_dist(
                p,
                &comp.vertices()[e.tail].position,
                &comp.vertices()[e.head].position,
            ) <= tol
        })
}

fn component_summaries(
    report: &SolveReport,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    validate: bool,
) -> Result<Vec<ComponentSummary>> {
    let pts: Vec<Point> = mu
        .atoms
        .iter()
        .chain(&nu.atoms)
        .map(|a| a.position.clone())
        .collect();
    let tol = (1e-8 * spread(&pts)).max(crate::measures::POSITION_TOL);
    let mut out = Vec::new();
    for comp in report.path.connected_components() {
        let source_atoms: Vec<usize> = (0..mu.atoms.len())
            .filter(|&i| atom_on_component(&mu.atoms[i].position, &comp, tol))
            .collect();
        let sink_atoms: Vec<usize> = (0..nu.atoms.len())
            .filter(|&j| atom_on_component(&nu.atoms[j].position, &comp, tol))
            .collect();
        let mu_k: f64 = source_atoms.iter().map(|&i| mu.atoms[i].mass).sum();
        let nu_k: f64 = sink_atoms.iter().map(|&j| nu.atoms[j].mass).sum();
        let m_k = (mu_k - nu_k).max(0.0);
        let n_k = (nu_k - mu_k).max(0.0);
        let mut under_used: Vec<(Side, usize, f64)> = Vec::new();
        for &i in &source_atoms {
            let gap = mu.atoms[i].mass - report.allocation.source_used[i];
            if gap > MASS_TOL {
                under_used.push((Side::Source, i, gap));
            }
        }
        for &j in &sink_atoms {
            let gap = nu.atoms[j].mass - report.allocation.sink_used[j];
            if gap > MASS_TOL {
                under_used.push((Side::Sink, j, gap));
            }
        }
        if validate && under_used.len() > 1 {
            return Err(Error::StructureViolation(format!(
                "{} partially used atoms on one component",
                under_used.len()
            )));
        }
        let balance = if m_k > MASS_TOL {
            BalanceClass::OverSupply
        } else if n_k > MASS_TOL {
            BalanceClass::OverDemand
        } else {
            BalanceClass::Balanced
        };
        if validate {
            match balance {
                BalanceClass::Balanced => {
                    if let Some((_, _, gap)) = under_used.first() {
                        if *gap > SLACK_TOL {
                            return Err(Error::StructureViolation(
                                "partial atom on a balanced component".into(),
                            ));
                        }
                    }
                }
                BalanceClass::OverSupply => {
                    let Some((side, _, gap)) = under_used.first() else {
                        return Err(Error::StructureViolation(
                            "over-supplied component with every atom fully used".into(),
                        ));
                    };
                    if *side != Side::Source || (gap - m_k).abs() > SLACK_TOL {
                        return Err(Error::StructureViolation(format!(
                            "slack {gap} does not match the component imbalance {m_k}"
                        )));
                    }
                }
                BalanceClass::OverDemand => {
                    let Some((side, _, gap)) = under_used.first() else {
                        return Err(Error::StructureViolation(
                            "over-demanded component with every atom fully used".into(),
                        ));
                    };
                    if *side != Side::Sink || (gap - n_k).abs() > SLACK_TOL {
                        return Err(Error::StructureViolation(format!(
                            "slack {gap} does not match the component imbalance {n_k}"
                        )));
                    }
                }
            }
        }
        let (slack_atom, slack_amount) = match under_used.first() {
            Some((side, idx, gap)) if *gap > SLACK_TOL => (Some((*side, *idx)), *gap),
            _ => (None, 0.0),
        };
        out.push(ComponentSummary {
            source_atoms,
            sink_atoms,
            balance,
            slack_atom,
            slack_amount,
        });
    }
    Ok(out)
}

/// Recomputes and verifies the per-component structure of a certified
/// report: at most one partially used atom per component, with slack equal
/// to the component imbalance.
pub fn extract_structure(
    report: &SolveReport,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
) -> Result<Vec<ComponentSummary>> {
    if !(report.alpha > 0.0 && report.alpha < 1.0) {
        return Err(Error::InvalidParameter(
            "structure extraction requires 0 < alpha < 1".into(),
        ));
    }
    if !report.certified {
        return Err(Error::InvalidParameter(
            "structure extraction requires a certified report".into(),
        ));
    }
    let mu = quantize_measure(mu)?;
    let nu = quantize_measure(nu)?;
    component_summaries(report, &mu, &nu, true)
}

/// Checks the discrete optimality certificate: every component of the path
/// carries at most one under-used boundary atom, and every nonzero component
/// touches at least one fully used atom.
pub fn perturbation_certificate(
    report: &SolveReport,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
) -> bool {
    let (Ok(mu), Ok(nu)) = (quantize_measure(mu), quantize_measure(nu)) else {
        return false;
    };
    let pts: Vec<Point> = mu
        .atoms
        .iter()
        .chain(&nu.atoms)
        .map(|a| a.position.clone())
        .collect();
    let tol = (1e-8 * spread(&pts)).max(crate::measures::POSITION_TOL);
    let under_used_src: Vec<usize> = (0..mu.atoms.len())
        .filter(|&i| mu.atoms[i].mass - report.allocation.source_used[i] > MASS_TOL)
        .collect();
    let under_used_snk: Vec<usize> = (0..nu.atoms.len())
        .filter(|&j| nu.atoms[j].mass - report.allocation.sink_used[j] > MASS_TOL)
        .collect();
    for comp in report.path.connected_components() {
        let mut p_members = 0usize;
        let mut fully_used_touched = 0usize;
        for i in 0..mu.atoms.len() {
            if atom_on_component(&mu.atoms[i].position, &comp, tol) {
                if under_used_src.contains(&i) {
                    p_members += 1;
                } else {
                    fully_used_touched += 1;
                }
            }
        }
        for j in 0..nu.atoms.len() {
            if atom_on_component(&nu.atoms[j].position, &comp, tol) {
                if under_used_snk.contains(&j) {
                    p_members += 1;
                } else {
                    fully_used_touched += 1;
                }
            }
        }
        if p_members > 1 || fully_used_touched == 0 {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Heuristic mode beyond the oracle limit
// ---------------------------------------------------------------------------

fn heuristic_search(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    h: &PayoffSpec,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let ns = mu.atoms.len();
    let nk = nu.atoms.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.relaxation.seed.wrapping_add(0x5eed));
    // usage candidates: full use, plus random subsets, each rebalanced by
    // trimming one atom on the heavy side
    let mut masks: Vec<Vec<bool>> = vec![vec![true; ns + nk]];
    for _ in 0..24 {
        masks.push((0..ns + nk).map(|_| rng.gen_bool(0.7)).collect());
    }
    let mut best: Option<(f64, Allocation, TransportPath)> = None;
    for mask in masks {
        let Some((allocation, sources, sinks)) = rebalanced_allocation(mu, nu, &mask) else {
            continue;
        };
        if sources.is_empty() {
            continue;
        }
        let (cost, path) = heuristic_min_cost(&sources, &sinks, alpha, cfg)?;
        let mut gain = 0.0;
        for (i, u) in allocation.source_used.iter().enumerate() {
            gain -= h.source_value(&mu.atoms[i].position)? * u;
        }
        for (j, u) in allocation.sink_used.iter().enumerate() {
            gain += h.sink_value(&nu.atoms[j].position)? * u;
        }
        let energy = cost - gain;
        if best.as_ref().map_or(true, |(be, _, _)| energy < *be) {
            best = Some((energy, allocation, path));
        }
    }
    match best {
        Some((energy, allocation, path)) if energy < 0.0 => {
            finish_report(mu, nu, h, alpha, path, allocation, energy, false)
        }
        _ => Ok(SolveReport {
            certified: false,
            ..zero_report(mu, nu, alpha)
        }),
    }
}

/// Builds an allocation from a 0/1 mask, trimming the heaviest-side excess
/// from one atom so the two sides balance exactly.
fn rebalanced_allocation(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    mask: &[bool],
) -> Option<(Allocation, Vec<Atom>, Vec<Atom>)> {
    let ns = mu.atoms.len();
    let mut source_used: Vec<f64> = mu
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| if mask[i] { a.mass } else { 0.0 })
        .collect();
    let mut sink_used: Vec<f64> = nu
        .atoms
        .iter()
        .enumerate()
        .map(|(j, a)| if mask[ns + j] { a.mass } else { 0.0 })
        .collect();
    let imbalance: f64 = source_used.iter().sum::<f64>() - sink_used.iter().sum::<f64>();
    let side = if imbalance > 0.0 {
        &mut source_used
    } else {
        &mut sink_used
    };
    let mut need = imbalance.abs();
    // trim from the largest used atoms downward
    let mut order: Vec<usize> = (0..side.len()).collect();
    order.sort_by(|&a, &b| side[b].total_cmp(&side[a]));
    for i in order {
        if need == 0.0 {
            break;
        }
        let cut = side[i].min(need);
        side[i] -= cut;
        need -= cut;
    }
    if need > 0.0 {
        return None;
    }
    let allocation = Allocation {
        source_used,
        sink_used,
    };
    let sources: Vec<Atom> = mu
        .atoms
        .iter()
        .zip(&allocation.source_used)
        .filter(|(_, u)| **u > 0.0)
        .map(|(a, u)| Atom::new(a.position.clone(), *u))
        .collect();
    let sinks: Vec<Atom> = nu
        .atoms
        .iter()
        .zip(&allocation.sink_used)
        .filter(|(_, u)| **u > 0.0)
        .map(|(a, u)| Atom::new(a.position.clone(), *u))
        .collect();
    Some((allocation, sources, sinks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SolverConfig;

    fn two_atom() -> (AtomicMeasure, AtomicMeasure) {
        (
            AtomicMeasure::from_pairs(&[([0.0, 0.0], 1.0)]).unwrap(),
            AtomicMeasure::from_pairs(&[([1.0, 0.0], 1.0)]).unwrap(),
        )
    }

    #[test]
    fn two_atom_threshold_below() {
        let (mu, nu) = two_atom();
        let cfg = SolverConfig::default();
        let r = solve(&mu, &nu, &PayoffSpec::constant(0.4), 0.5, &cfg).unwrap();
        assert_eq!(r.energy, 0.0);
        assert!(r.path.is_empty());
        assert!(r.certified);
    }

    #[test]
    fn two_atom_threshold_above() {
        let (mu, nu) = two_atom();
        let cfg = SolverConfig::default();
        let r = solve(&mu, &nu, &PayoffSpec::constant(0.6), 0.5, &cfg).unwrap();
        assert!((r.energy - (-0.2)).abs() < 1e-9);
        assert_eq!(r.path.edges().len(), 1);
        assert!((r.allocation.transported_mass() - 1.0).abs() < 1e-12);
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.components[0].balance, BalanceClass::Balanced);
    }

    #[test]
    fn two_atom_exact_threshold_prefers_zero() {
        let (mu, nu) = two_atom();
        let cfg = SolverConfig::default();
        let r = solve(&mu, &nu, &PayoffSpec::constant(0.5), 0.5, &cfg).unwrap();
        assert_eq!(r.energy, 0.0);
        assert!(r.path.is_empty());
    }

    #[test]
    fn over_supply_slack_structure() {
        let mu = AtomicMeasure::from_pairs(&[([0.0, 0.0], 2.0)]).unwrap();
        let nu = AtomicMeasure::from_pairs(&[([1.0, 0.0], 1.0)]).unwrap();
        let cfg = SolverConfig::default();
        let r = solve(&mu, &nu, &PayoffSpec::constant(5.0), 0.5, &cfg).unwrap();
        // move mass 1: E = 1 - 2*5*1 = -9
        assert!((r.energy - (-9.0)).abs() < 1e-9);
        assert!((r.allocation.source_used[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.components.len(), 1);
        let comp = &r.components[0];
        assert_eq!(comp.balance, BalanceClass::OverSupply);
        assert_eq!(comp.slack_atom, Some((Side::Source, 0)));
        assert!((comp.slack_amount - 1.0).abs() < 1e-9);
        let summaries = extract_structure(&r, &mu, &nu).unwrap();
        assert_eq!(summaries, r.components);
        assert!(perturbation_certificate(&r, &mu, &nu));
    }

    #[test]
    fn zero_shortcut_cases() {
        let (mu, nu) = two_atom();
        // payoff identically zero
        let r = solve_zero_shortcut(&mu, &nu, &PayoffSpec::constant(0.0), 0.5).unwrap();
        assert_eq!(r.energy, 0.0);
        // negative payoff
        assert!(solve_zero_shortcut(&mu, &nu, &PayoffSpec::constant(-1.0), 0.5).is_some());
        // positive payoff: shortcut inapplicable
        assert!(solve_zero_shortcut(&mu, &nu, &PayoffSpec::constant(1.0), 0.5).is_none());
    }

    #[test]
    fn overlapping_supports_rejected() {
        let mu = AtomicMeasure::from_pairs(&[([0.0, 0.0], 1.0)]).unwrap();
        let r = solve(
            &mu,
            &mu,
            &PayoffSpec::constant(1.0),
            0.5,
            &SolverConfig::default(),
        );
        assert!(matches!(r, Err(Error::UnsupportedInput(_))));
    }

    #[test]
    fn residual_energy_is_zero() {
        let mu = AtomicMeasure::from_pairs(&[([0.0, 0.0], 2.0), ([0.2, 0.7], 1.0)]).unwrap();
        let nu = AtomicMeasure::from_pairs(&[([1.0, 0.0], 1.5)]).unwrap();
        let cfg = SolverConfig::default();
        let h = PayoffSpec::constant(0.9);
        let r = solve(&mu, &nu, &h, 0.5, &cfg).unwrap();
        let mu_rest = mu.sub(&r.allocation.mu_star(&mu)).unwrap();
        let nu_rest = nu.sub(&r.allocation.nu_star(&nu)).unwrap();
        let rest = solve(&mu_rest, &nu_rest, &h, 0.5, &cfg).unwrap();
        assert!(rest.energy.abs() < 1e-6);
    }

    #[test]
    fn heuristic_mode_flags_uncertified() {
        let mut src = Vec::new();
        let mut snk = Vec::new();
        for i in 0..5 {
            src.push(([i as f64, 0.0], 1.0));
            snk.push(([i as f64, 1.0], 1.0));
        }
        let mu = AtomicMeasure::from_pairs(&src).unwrap();
        let nu = AtomicMeasure::from_pairs(&snk).unwrap();
        let r = solve(
            &mu,
            &nu,
            &PayoffSpec::constant(5.0),
            0.5,
            &SolverConfig::heuristic(),
        )
        .unwrap();
        assert!(!r.certified);
        // full transport of five unit edges: E = 5 - 2*5*5 = -45
        assert!(r.energy <= -44.9);
    }
}
