//! Cross-module property tests: order axioms on measures, cost
//! subadditivity, decomposition round trips, metric axioms of the transport
//! cost, local optimality of relaxed paths, and the energy monotonicity and
//! structure guarantees of the outer search.

mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{random_balanced_instance, random_instance, random_payoff, rng};
use rotpb_core::*;

// ---------------------------------------------------------------------------
// measures: the `leq` relation is a partial order up to tolerance
// ---------------------------------------------------------------------------

fn measure_strategy() -> impl Strategy<Value = AtomicMeasure> {
    // coarse grid positions so that coincidences actually occur
    prop::collection::vec(((0u8..4, 0u8..4), 1u8..8), 0..5).prop_map(|atoms| {
        AtomicMeasure::from_pairs(
            &atoms
                .iter()
                .map(|((x, y), m)| ([*x as f64 / 4.0, *y as f64 / 4.0], *m as f64 * 0.25))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn leq_is_reflexive(a in measure_strategy()) {
        prop_assert!(a.leq(&a));
    }

    #[test]
    fn leq_is_antisymmetric(a in measure_strategy(), b in measure_strategy()) {
        if a.leq(&b) && b.leq(&a) {
            // equal total mass and support up to tolerance
            prop_assert!((a.total_mass() - b.total_mass()).abs() <= 2e-9 * (1.0 + a.total_mass()));
            for atom in &a.atoms {
                prop_assert!((b.mass_at(&atom.position) - atom.mass).abs() <= 2e-9);
            }
        }
    }

    #[test]
    fn leq_is_transitive(a in measure_strategy(), b in measure_strategy(), c in measure_strategy()) {
        if a.leq(&b) && b.leq(&c) {
            // tolerance slack can accumulate once per step
            for atom in &a.atoms {
                prop_assert!(atom.mass <= c.mass_at(&atom.position) + 2.0 * 1e-9 + 1e-15);
            }
        }
    }

    #[test]
    fn normalize_is_idempotent_and_mass_preserving(a in measure_strategy()) {
        let n = a.normalize().unwrap();
        prop_assert_eq!(&n, &n.normalize().unwrap());
        prop_assert!((n.total_mass() - a.total_mass()).abs() <= 1e-12 * (1.0 + a.total_mass()));
    }
}

// ---------------------------------------------------------------------------
// transport paths: overlay cost subadditivity
// ---------------------------------------------------------------------------

/// Random polyline with all-boundary vertices (trivially conserving).
fn random_chain(rng: &mut rand_chacha::ChaCha8Rng, grid: f64) -> TransportPath {
    let n = rng.gen_range(2..5usize);
    let mut pts: Vec<[f64; 2]> = Vec::new();
    while pts.len() < n {
        let p = [
            (rng.gen_range(0..5) as f64) * grid,
            (rng.gen_range(0..5) as f64) * grid,
        ];
        if pts.last() != Some(&p) && !pts.contains(&p) {
            pts.push(p);
        }
    }
    let flow = rng.gen_range(1..8) as f64 * 0.25;
    let vertices: Vec<Vertex> = pts
        .iter()
        .map(|p| Vertex {
            position: (*p).into(),
            kind: VertexKind::Boundary,
        })
        .collect();
    let edges = (0..n - 1)
        .map(|i| rotpb_core::path::Edge {
            tail: i,
            head: i + 1,
            flow,
        })
        .collect();
    TransportPath::new(vertices, edges).unwrap()
}

#[test]
fn overlay_cost_is_subadditive_and_additive_when_disjoint() {
    let mut r = rng(11);
    for trial in 0..200u32 {
        let a = random_chain(&mut r, 0.25);
        let b = random_chain(&mut r, 0.25);
        let alpha = r.gen_range(0.05..0.95);
        let Ok(sum) = a.overlay(&b) else { continue };
        let ca = a.m_alpha(alpha).unwrap();
        let cb = b.m_alpha(alpha).unwrap();
        let cs = sum.m_alpha(alpha).unwrap();
        assert!(
            cs <= ca + cb + 1e-9 * (1.0 + ca + cb),
            "trial {trial}: {cs} > {ca} + {cb}"
        );
        // disjoint segments (no shared vertex pair) make the cost additive
        let shares_edge = a.edges().iter().any(|ea| {
            b.edges().iter().any(|eb| {
                let (pa, qa) = (
                    &a.vertices()[ea.tail].position,
                    &a.vertices()[ea.head].position,
                );
                let (pb, qb) = (
                    &b.vertices()[eb.tail].position,
                    &b.vertices()[eb.head].position,
                );
                (pa.same_site(pb) && qa.same_site(qb)) || (pa.same_site(qb) && qa.same_site(pb))
            })
        });
        if !shares_edge {
            assert!(
                (cs - (ca + cb)).abs() <= 1e-9 * (1.0 + ca + cb),
                "trial {trial}: expected additivity"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// good decomposition on relaxed skeletons
// ---------------------------------------------------------------------------

#[test]
fn decomposition_round_trips_on_relaxed_skeletons() {
    let mut r = rng(23);
    let cfg = RelaxationConfig::default();
    for trial in 0..40u32 {
        let (mu, nu) = random_balanced_instance(&mut r, 3, 3);
        let topos = enumerate_topologies(mu.atoms.len(), nu.atoms.len(), 6, 6).unwrap();
        let alpha = r.gen_range(0.2..0.9);
        for topo in topos.iter().take(8) {
            let Ok(path) = relax_positions(topo, &mu, &nu, alpha, &cfg) else {
                continue; // unbalanced forest for these masses
            };
            assert!(path.is_acyclic());
            let d = good_decomposition(&path).unwrap();
            assert!(
                d.recovers_flows_exactly(&path),
                "trial {trial}: recovery error {:.3e}",
                d.max_recovery_error(&path)
            );
            let tv = path.boundary().unwrap().total_variation();
            assert!((d.total_weight() - tv / 2.0).abs() <= 1e-9 * (1.0 + tv));
            let mass = path.mass();
            assert!((d.total_cost(&path) - mass).abs() <= 1e-9 * (1.0 + mass));
            for p in &d.paths {
                assert!(p.weight > 0.0);
                let mut seen = p.vertices.clone();
                seen.sort_unstable();
                seen.dedup();
                assert_eq!(seen.len(), p.vertices.len(), "simple path");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// d_alpha: metric axioms, upper bound, local optimality, mass bound
// ---------------------------------------------------------------------------

#[test]
fn d_alpha_metric_axioms() {
    let mut r = rng(37);
    let cfg = SolverConfig::default();
    for trial in 0..12u32 {
        let alpha = r.gen_range(0.3..0.9);
        // three balanced measures over disjoint sites, equal total: move a
        // fixed quarter-unit budget among 1..=2 atoms each
        let total_units = r.gen_range(2..=4u32);
        let mut taken = Vec::new();
        let mut measures = Vec::new();
        for _ in 0..3 {
            let k = r.gen_range(1..=2usize).min(total_units as usize);
            let pts = common::random_points(&mut r, k, &mut taken);
            let mut units = vec![1u32; k];
            for _ in 0..total_units as usize - k {
                let i = r.gen_range(0..k);
                units[i] += 1;
            }
            measures.push(
                AtomicMeasure::from_pairs(
                    &pts.iter()
                        .zip(&units)
                        .map(|(p, u)| (*p, *u as f64 * 0.25))
                        .collect::<Vec<_>>(),
                )
                .unwrap(),
            );
        }
        let d = |a: &AtomicMeasure, b: &AtomicMeasure| d_alpha(a, b, alpha, &cfg).unwrap().value;
        let (m1, m2, m3) = (&measures[0], &measures[1], &measures[2]);
        assert_eq!(d(m1, m1), 0.0, "identity");
        let d12 = d(m1, m2);
        let d21 = d(m2, m1);
        assert!((d12 - d21).abs() <= 1e-9 * (1.0 + d12), "symmetry");
        let d23 = d(m2, m3);
        let d13 = d(m1, m3);
        assert!(
            d13 <= d12 + d23 + 1e-6,
            "trial {trial}: triangle {d13} > {d12} + {d23}"
        );
    }
}

#[test]
fn d_alpha_respects_dimensional_upper_bound() {
    let mut r = rng(41);
    let cfg = SolverConfig {
        domain_diam: Some(2f64.sqrt()),
        ..SolverConfig::default()
    };
    for _ in 0..15 {
        let (mu, nu) = random_balanced_instance(&mut r, 3, 3);
        let alpha = r.gen_range(0.55..0.95); // within (1 - 1/2, 1)
        let value = d_alpha(&mu, &nu, alpha, &cfg).unwrap().value;
        let bound = c_upper_bound(mu.total_mass(), 2f64.sqrt(), alpha, 2).unwrap();
        assert!(value <= bound + 1e-9, "{value} > {bound}");
    }
}

#[test]
fn relaxed_paths_are_first_order_optimal() {
    let mut r = rng(43);
    let cfg = SolverConfig::default();
    for trial in 0..25u32 {
        let (mu, nu) = random_balanced_instance(&mut r, 3, 2);
        let alpha = r.gen_range(0.2..0.9);
        let result = d_alpha(&mu, &nu, alpha, &cfg).unwrap();
        let base = result.path.m_alpha(alpha).unwrap();
        assert!(result.path.mass_bound_holds(alpha).unwrap(), "mass bound");
        for (vid, v) in result.path.vertices().iter().enumerate() {
            if v.kind != VertexKind::Branch {
                continue;
            }
            for axis in 0..v.position.dim() {
                for dir in [-1.0, 1.0] {
                    let mut vertices = result.path.vertices().to_vec();
                    vertices[vid].position.coords[axis] += dir * 1e-5;
                    let edges = result.path.edges().to_vec();
                    let perturbed = TransportPath::new(vertices, edges).unwrap();
                    let cost = perturbed.m_alpha(alpha).unwrap();
                    assert!(
                        cost >= base - 1e-8,
                        "trial {trial}: perturbing vertex {vid} axis {axis} dir {dir} \
                         improved {base} -> {cost}"
                    );
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// outer search: energy monotonicity, boundary feasibility, structure
// ---------------------------------------------------------------------------

#[test]
fn energy_is_monotone_under_enlarging_measures() {
    let mut r = rng(53);
    let cfg = SolverConfig::default();
    for trial in 0..20u32 {
        let (mu, nu) = random_instance(&mut r, 3, 3);
        let h = random_payoff(&mut r, &mu, &nu, trial as u64);
        let alpha = r.gen_range(0.1..0.95);
        let full = energy_value(&mu, &nu, &h, alpha, &cfg).unwrap();
        assert!(full <= 0.0);
        // shrink both measures atom-wise
        let shrink = |m: &AtomicMeasure, r: &mut rand_chacha::ChaCha8Rng| {
            AtomicMeasure::new(
                m.atoms
                    .iter()
                    .map(|a| Atom::new(a.position.clone(), a.mass * r.gen_range(0.2..1.0)))
                    .collect(),
            )
            .unwrap()
        };
        let mu_t = shrink(&mu, &mut r);
        let nu_t = shrink(&nu, &mut r);
        let partial = energy_value(&mu_t, &nu_t, &h, alpha, &cfg).unwrap();
        assert!(partial <= 0.0);
        assert!(
            partial >= full - 1e-6,
            "trial {trial}: E(sub) {partial} < E(full) {full}"
        );
    }
}

#[test]
fn solver_boundary_always_dominated() {
    let mut r = rng(59);
    let cfg = SolverConfig::default();
    for trial in 0..25u32 {
        let (mu, nu) = random_instance(&mut r, 3, 3);
        let h = random_payoff(&mut r, &mu, &nu, trial as u64);
        let alpha = r.gen_range(0.1..0.95);
        let report = solve(&mu, &nu, &h, alpha, &cfg).unwrap();
        let boundary = report.path.boundary().unwrap();
        let target = SignedAtomicMeasure::difference(&nu, &mu).unwrap();
        assert!(boundary.preceq(&target), "trial {trial}");
        let recomputed = report.path.energy(&h, alpha).unwrap();
        assert!((recomputed - report.energy).abs() <= 1e-9 * (1.0 + report.energy.abs()));
    }
}

#[test]
fn single_source_components_when_sources_dominate() {
    let mut r = rng(61);
    let cfg = SolverConfig::default();
    for trial in 0..15u32 {
        let ns = r.gen_range(1..=2usize);
        let nk = r.gen_range(1..=3usize);
        let mut taken = Vec::new();
        let src = common::random_points(&mut r, ns, &mut taken);
        let snk = common::random_points(&mut r, nk, &mut taken);
        // every source alone can cover the whole demand
        let demand: Vec<f64> = (0..nk).map(|_| r.gen_range(1..=4) as f64 * 0.25).collect();
        let total: f64 = demand.iter().sum();
        let mu = AtomicMeasure::from_pairs(
            &src.iter()
                .map(|p| (*p, total + r.gen_range(0..=4) as f64 * 0.25))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let nu = AtomicMeasure::from_pairs(
            &snk.iter()
                .zip(&demand)
                .map(|(p, d)| (*p, *d))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let report = solve(&mu, &nu, &PayoffSpec::constant(4.0), 0.6, &cfg).unwrap();
        for comp in &report.components {
            assert_eq!(
                comp.source_atoms.len(),
                1,
                "trial {trial}: component with {} sources",
                comp.source_atoms.len()
            );
        }
    }
}

#[test]
fn residual_measures_have_zero_energy() {
    let mut r = rng(67);
    let cfg = SolverConfig::default();
    for trial in 0..15u32 {
        let (mu, nu) = random_instance(&mut r, 3, 2);
        let h = random_payoff(&mut r, &mu, &nu, trial as u64);
        let alpha = r.gen_range(0.1..0.95);
        let report = solve(&mu, &nu, &h, alpha, &cfg).unwrap();
        let mu_rest = rotpb_core::dalpha::quantize_measure(&mu)
            .unwrap()
            .sub(&report.allocation.mu_star(&mu))
            .unwrap();
        let nu_rest = rotpb_core::dalpha::quantize_measure(&nu)
            .unwrap()
            .sub(&report.allocation.nu_star(&nu))
            .unwrap();
        let rest = energy_value(&mu_rest, &nu_rest, &h, alpha, &cfg).unwrap();
        assert!(rest.abs() <= 1e-6, "trial {trial}: residual energy {rest}");
    }
}
