//! Acceptance suite: one test per criterion, each printing a pass line with
//! its measured evidence. Tolerances are pinned in the assertions.

mod common;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use common::{random_balanced_instance, random_instance, random_payoff, rng};
use rotpb_core::*;

fn two_atom() -> (AtomicMeasure, AtomicMeasure) {
    (
        AtomicMeasure::from_pairs(&[([0.0, 0.0], 1.0)]).unwrap(),
        AtomicMeasure::from_pairs(&[([1.0, 0.0], 1.0)]).unwrap(),
    )
}

/// Criterion 1: the two-atom instance switches from the zero path to the
/// full unit edge exactly at c = 1/2, with closed-form energies, for every
/// alpha, in under a second.
#[test]
fn acceptance_1_two_atom_threshold() {
    let started = Instant::now();
    let (mu, nu) = two_atom();
    let cfg = SolverConfig::default();
    let mut solves = 0;
    for alpha in [0.3, 0.5, 0.75] {
        for k in 1..10 {
            let c = k as f64 * 0.05; // 0.05 .. 0.45
            let r = solve(&mu, &nu, &PayoffSpec::constant(c), alpha, &cfg).unwrap();
            assert!(r.certified);
            assert!(
                r.energy.abs() <= 1e-9,
                "alpha={alpha} c={c}: E={}",
                r.energy
            );
            assert!(r.path.is_empty(), "alpha={alpha} c={c}: expected zero path");
            solves += 1;
        }
        for c in [0.55, 0.6, 0.7, 0.8, 0.9, 0.95, 2.0, 10.0] {
            let r = solve(&mu, &nu, &PayoffSpec::constant(c), alpha, &cfg).unwrap();
            assert!(r.certified);
            assert!(
                (r.energy - (1.0 - 2.0 * c)).abs() <= 1e-9,
                "alpha={alpha} c={c}: E={} expected {}",
                r.energy,
                1.0 - 2.0 * c
            );
            assert_eq!(r.path.edges().len(), 1, "alpha={alpha} c={c}");
            assert!((r.allocation.transported_mass() - 1.0).abs() <= 1e-9);
            solves += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "two-atom threshold suite took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 1 (two-atom threshold): PASS — {solves} solves, exact to 1e-9, {elapsed:?}"
    );
}

/// Criterion 2: 200 random instances (up to 6 atoms, random alpha and
/// payoffs); every certified report passes structure extraction and the
/// perturbation certificate, within ten minutes.
#[test]
fn acceptance_2_structure_theorem_suite() {
    let started = Instant::now();
    let failures: Vec<String> = (0..200u64)
        .into_par_iter()
        .map(|seed| -> std::result::Result<(), String> {
            let mut r = rng(1000 + seed);
            let (mu, nu) = random_instance(&mut r, 3, 3);
            let alpha = r.gen_range(0.05..0.98);
            let h = random_payoff(&mut r, &mu, &nu, seed);
            let cfg = SolverConfig::default();
            let report =
                solve(&mu, &nu, &h, alpha, &cfg).map_err(|e| format!("seed {seed}: solve: {e}"))?;
            if !report.certified {
                return Err(format!("seed {seed}: report not certified"));
            }
            extract_structure(&report, &mu, &nu)
                .map_err(|e| format!("seed {seed}: extract_structure: {e}"))?;
            if !perturbation_certificate(&report, &mu, &nu) {
                return Err(format!("seed {seed}: perturbation certificate failed"));
            }
            Ok(())
        })
        .filter_map(|r| r.err())
        .collect();
    let elapsed = started.elapsed();
    assert!(failures.is_empty(), "{failures:?}");
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "structure suite took {elapsed:?}"
    );
    println!("ACCEPTANCE 2 (structure theorems): PASS — 200 instances, 0 failures, {elapsed:?}");
}

/// Criterion 3: energy-functional properties on 50 random instance pairs —
/// monotonicity under enlarging measures, subadditivity across disjoint
/// pairs, and zero energy of the residual measures, all to 1e-6.
#[test]
fn acceptance_3_energy_functional_properties() {
    let failures: Vec<String> = (0..50u64)
        .into_par_iter()
        .map(|seed| -> std::result::Result<(), String> {
            let mut r = rng(2000 + seed);
            let cfg = SolverConfig::default();
            let alpha = r.gen_range(0.2..0.9);
            let c = r.gen_range(0.3..1.5);
            let h = PayoffSpec::constant(c);
            // instance A in the unit box, instance B shifted right
            let (mu1, nu1) = random_instance(&mut r, 2, 1);
            let (mut mu2, mut nu2) = random_instance(&mut r, 2, 1);
            for a in mu2.atoms.iter_mut().chain(nu2.atoms.iter_mut()) {
                a.position.coords[0] += 3.0;
            }
            let e1 = energy_value(&mu1, &nu1, &h, alpha, &cfg)
                .map_err(|e| format!("seed {seed}: {e}"))?;
            let e2 = energy_value(&mu2, &nu2, &h, alpha, &cfg)
                .map_err(|e| format!("seed {seed}: {e}"))?;
            let combined = energy_value(&mu1.add(&mu2), &nu1.add(&nu2), &h, alpha, &cfg)
                .map_err(|e| format!("seed {seed}: {e}"))?;
            if e1 > 0.0 || e2 > 0.0 || combined > 0.0 {
                return Err(format!("seed {seed}: positive energy"));
            }
            if combined > e1 + e2 + 1e-6 {
                return Err(format!(
                    "seed {seed}: subadditivity {combined} > {e1} + {e2}"
                ));
            }
            // monotonicity: a shrunken pair can never do better
            let shrink = |m: &AtomicMeasure, r: &mut rand_chacha::ChaCha8Rng| {
                AtomicMeasure::new(
                    m.atoms
                        .iter()
                        .map(|a| Atom::new(a.position.clone(), a.mass * r.gen_range(0.2..1.0)))
                        .collect(),
                )
                .unwrap()
            };
            let sub = energy_value(
                &shrink(&mu1, &mut r),
                &shrink(&nu1, &mut r),
                &h,
                alpha,
                &cfg,
            )
            .map_err(|e| format!("seed {seed}: {e}"))?;
            if sub < e1 - 1e-6 || sub > 0.0 {
                return Err(format!("seed {seed}: monotonicity {sub} vs {e1}"));
            }
            // residual-zero
            let report =
                solve(&mu1, &nu1, &h, alpha, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            let mu_q = rotpb_core::dalpha::quantize_measure(&mu1).unwrap();
            let nu_q = rotpb_core::dalpha::quantize_measure(&nu1).unwrap();
            let rest = energy_value(
                &mu_q.sub(&report.allocation.mu_star(&mu1)).unwrap(),
                &nu_q.sub(&report.allocation.nu_star(&nu1)).unwrap(),
                &h,
                alpha,
                &cfg,
            )
            .map_err(|e| format!("seed {seed}: {e}"))?;
            if rest.abs() > 1e-6 {
                return Err(format!("seed {seed}: residual energy {rest}"));
            }
            Ok(())
        })
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    println!("ACCEPTANCE 3 (energy functional): PASS — 50 pairs, monotone + subadditive + residual-zero at 1e-6");
}

fn sweep_alpha(seed: u64) -> f64 {
    [0.6, 0.75, 0.9][(seed % 3) as usize]
}

/// Criterion 4: sweeps on 20 random balanced instances show monotone
/// energy/cost/boundary-mass and stay below the full transport cost.
#[test]
fn acceptance_4_sweep_monotonicity() {
    let grid = default_c_grid();
    assert_eq!(grid.len(), 12);
    let failures: Vec<String> = (0..20u64)
        .into_par_iter()
        .map(|seed| -> std::result::Result<(), String> {
            let mut r = rng(3000 + seed);
            let (mu, nu) = random_balanced_instance(&mut r, 3, 2);
            let alpha = sweep_alpha(seed);
            let cfg = SolverConfig::default();
            let report =
                run_sweep(&mu, &nu, alpha, &grid, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            if !report.certified {
                return Err(format!("seed {seed}: sweep not certified"));
            }
            let violations = check_monotonicity(&report);
            if !violations.is_empty() {
                return Err(format!("seed {seed}: {violations:?}"));
            }
            if !check_prop_upper_bound(&report, report.d_alpha_value) {
                return Err(format!(
                    "seed {seed}: a record exceeds d_alpha {}",
                    report.d_alpha_value
                ));
            }
            for rec in &report.records {
                if rec.energy > 0.0 {
                    return Err(format!("seed {seed}: positive energy at c={}", rec.c));
                }
                if rec.m_alpha > rec.c * rec.boundary_mass + 1e-9 {
                    return Err(format!(
                        "seed {seed}: m_alpha {} exceeds c * boundary mass {} at c={}",
                        rec.m_alpha,
                        rec.c * rec.boundary_mass,
                        rec.c
                    ));
                }
            }
            Ok(())
        })
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    println!("ACCEPTANCE 4 (sweep monotonicity): PASS — 20 sweeps x 12 grid points, slack 1e-6");
}

/// Criterion 5: the unmoved-mass decay bound holds on every sweep record in
/// dimension 2 for alpha in {0.6, 0.75, 0.9}; spot anchor for the
/// dimensional constant.
#[test]
fn acceptance_5_unmoved_mass_bound() {
    let anchor = c_m_alpha(0.75, 2).unwrap();
    assert!((anchor - 1.707107).abs() <= 1e-6, "C_2_0.75 = {anchor}");
    let grid = default_c_grid();
    let diam = 2f64.sqrt(); // instances live in the unit square
    let failures: Vec<String> = (0..12u64)
        .into_par_iter()
        .map(|seed| -> std::result::Result<(), String> {
            let mut r = rng(4000 + seed);
            let (mu, nu) = random_balanced_instance(&mut r, 3, 2);
            let alpha = sweep_alpha(seed);
            let cfg = SolverConfig {
                domain_diam: Some(diam),
                ..SolverConfig::default()
            };
            let report =
                run_sweep(&mu, &nu, alpha, &grid, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            let violations = check_unmoved_bound(&report, alpha, 2, diam)
                .map_err(|e| format!("seed {seed}: {e}"))?;
            if !violations.is_empty() {
                return Err(format!("seed {seed}: {violations:?}"));
            }
            Ok(())
        })
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    println!(
        "ACCEPTANCE 5 (unmoved-mass bound): PASS — C_2_0.75 = {anchor:.6}, all records within bound + 1e-9"
    );
}

/// Criterion 6: the limit path at the largest grid c matches the
/// independent topology-enumeration oracle to 1e-6.
#[test]
fn acceptance_6_approximation_theorem() {
    let grid = default_c_grid();
    let failures: Vec<String> = (0..10u64)
        .into_par_iter()
        .map(|seed| -> std::result::Result<(), String> {
            let mut r = rng(5000 + seed);
            let (mu, nu) = random_balanced_instance(&mut r, 3, 2);
            let alpha = sweep_alpha(seed);
            let cfg = SolverConfig::default();
            let report =
                run_sweep(&mu, &nu, alpha, &grid, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            let limit = limit_path(&report).map_err(|e| format!("seed {seed}: {e}"))?;
            let cost = limit.m_alpha(alpha).unwrap();
            let oracle = d_alpha(&mu, &nu, alpha, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            if !oracle.certified {
                return Err(format!("seed {seed}: oracle not certified"));
            }
            if (cost - oracle.value).abs() > 1e-6 {
                return Err(format!(
                    "seed {seed}: limit cost {cost} vs oracle {}",
                    oracle.value
                ));
            }
            Ok(())
        })
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    println!(
        "ACCEPTANCE 6 (approximation theorem): PASS — 10 instances, |M_alpha - d_alpha| <= 1e-6"
    );
}

/// Criterion 7: the mass bound and an exact good decomposition hold on every
/// certified path; Y-graph anchor values reproduced.
#[test]
fn acceptance_7_mass_bound_and_decomposition() {
    // Y-graph anchor: sources (-1,0) and (1,0) with unit mass into a branch
    // at (0, 1/2), trunk to the sink (0,1) with mass 2
    let y = TransportPath::new(
        vec![
            Vertex {
                position: [-1.0, 0.0].into(),
                kind: VertexKind::Boundary,
            },
            Vertex {
                position: [1.0, 0.0].into(),
                kind: VertexKind::Boundary,
            },
            Vertex {
                position: [0.0, 0.5].into(),
                kind: VertexKind::Branch,
            },
            Vertex {
                position: [0.0, 1.0].into(),
                kind: VertexKind::Boundary,
            },
        ],
        vec![
            rotpb_core::path::Edge {
                tail: 0,
                head: 2,
                flow: 1.0,
            },
            rotpb_core::path::Edge {
                tail: 1,
                head: 2,
                flow: 1.0,
            },
            rotpb_core::path::Edge {
                tail: 2,
                head: 3,
                flow: 2.0,
            },
        ],
    )
    .unwrap();
    assert!((y.mass() - 3.236068).abs() <= 1e-6);
    assert!((y.m_alpha(0.5).unwrap() - 2.943175).abs() <= 1e-6);
    assert!(y.mass_bound_holds(0.5).unwrap());
    let d = good_decomposition(&y).unwrap();
    assert!(d.recovers_flows_exactly(&y));
    assert!((d.total_cost(&y) - y.mass()).abs() <= 1e-9 * (1.0 + y.mass()));

    let failures: Vec<String> = (0..40u64)
        .into_par_iter()
        .map(|seed| -> std::result::Result<(), String> {
            let mut r = rng(6000 + seed);
            let (mu, nu) = random_instance(&mut r, 3, 3);
            let alpha = r.gen_range(0.1..0.95);
            // payoff high enough that mass actually moves
            let h = PayoffSpec::constant(r.gen_range(1.0..4.0));
            let cfg = SolverConfig::default();
            let report =
                solve(&mu, &nu, &h, alpha, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            if !report.certified {
                return Err(format!("seed {seed}: not certified"));
            }
            if !report.path.mass_bound_holds(alpha).unwrap() {
                return Err(format!("seed {seed}: mass bound violated"));
            }
            let d = good_decomposition(&report.path).map_err(|e| format!("seed {seed}: {e}"))?;
            if !d.recovers_flows_exactly(&report.path) {
                return Err(format!(
                    "seed {seed}: recovery error {:.3e}",
                    d.max_recovery_error(&report.path)
                ));
            }
            let tv = report.path.boundary().unwrap().total_variation();
            if (d.total_weight() - tv / 2.0).abs() > 1e-9 * (1.0 + tv) {
                return Err(format!("seed {seed}: property (b) violated"));
            }
            let mass = report.path.mass();
            if (d.total_cost(&report.path) - mass).abs() > 1e-9 * (1.0 + mass) {
                return Err(format!("seed {seed}: property (a) violated"));
            }
            Ok(())
        })
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    println!(
        "ACCEPTANCE 7 (mass bound + decomposition): PASS — Y anchors 3.236068/2.943175, 40 certified paths exact"
    );
}

/// Criterion 8: when the payoff cannot reward any relocation, the shortcut
/// and the full search agree on the zero path, on 50 random instances.
#[test]
fn acceptance_8_zero_solution_shortcut() {
    let failures: Vec<String> = (0..50u64)
        .into_par_iter()
        .map(|seed| -> std::result::Result<(), String> {
            let mut r = rng(7000 + seed);
            let (mu, nu) = random_instance(&mut r, 3, 3);
            let alpha = r.gen_range(0.1..0.95);
            let h = if seed % 2 == 0 {
                // constant payoff with nonpositive c
                PayoffSpec::constant(r.gen_range(-1.0..=0.0))
            } else {
                // per-atom values with min over sources >= max over sinks
                let kv: Vec<f64> = (0..nu.atoms.len()).map(|_| r.gen_range(0.0..1.0)).collect();
                let lo = kv.iter().cloned().fold(0.0f64, f64::max);
                let sv: Vec<f64> = (0..mu.atoms.len())
                    .map(|_| lo + r.gen_range(0.0..1.0))
                    .collect();
                PayoffSpec::per_atom(&mu, &nu, &sv, &kv).unwrap()
            };
            let cfg = SolverConfig::default();
            let Some(short) = solve_zero_shortcut(&mu, &nu, &h, alpha) else {
                return Err(format!("seed {seed}: shortcut did not apply"));
            };
            if short.energy != 0.0 || !short.path.is_empty() {
                return Err(format!("seed {seed}: shortcut returned nonzero report"));
            }
            let full = solve_without_shortcut(&mu, &nu, &h, alpha, &cfg)
                .map_err(|e| format!("seed {seed}: {e}"))?;
            if full.energy != 0.0 || !full.path.is_empty() {
                return Err(format!(
                    "seed {seed}: full search returned energy {} with {} edges",
                    full.energy,
                    full.path.edges().len()
                ));
            }
            let via_solve =
                solve(&mu, &nu, &h, alpha, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            if via_solve.energy != 0.0 || !via_solve.path.is_empty() {
                return Err(format!("seed {seed}: solve disagrees with shortcut"));
            }
            Ok(())
        })
        .filter_map(|r| r.err())
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    println!(
        "ACCEPTANCE 8 (zero-solution shortcut): PASS — 50 instances, shortcut and full search agree"
    );
}
