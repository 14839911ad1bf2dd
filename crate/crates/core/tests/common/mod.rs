//! Shared random-instance generators for the integration suites.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use rotpb_core::{AtomicMeasure, PayoffSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Points in the unit square, pairwise at least 0.05 apart.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, taken: &mut Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    while out.len() < n {
        let p = [rng.gen::<f64>(), rng.gen::<f64>()];
        if taken
            .iter()
            .all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() > 0.05)
        {
            taken.push(p);
            out.push(p);
        }
    }
    out
}

/// Instance with continuous masses; not balanced in general.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_src: usize,
    max_snk: usize,
) -> (AtomicMeasure, AtomicMeasure) {
    let ns = rng.gen_range(1..=max_src);
    let nk = rng.gen_range(1..=max_snk);
    let mut taken = Vec::new();
    let src = random_points(rng, ns, &mut taken);
    let snk = random_points(rng, nk, &mut taken);
    let mu = AtomicMeasure::from_pairs(
        &src.iter()
            .map(|p| (*p, rng.gen_range(0.2..1.5)))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let nu = AtomicMeasure::from_pairs(
        &snk.iter()
            .map(|p| (*p, rng.gen_range(0.2..1.5)))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    (mu, nu)
}

/// Balanced instance with quarter-unit masses, so the two sides sum to the
/// same f64 exactly and full-transport thresholds stay bounded.
pub fn random_balanced_instance(
    rng: &mut ChaCha8Rng,
    max_src: usize,
    max_snk: usize,
) -> (AtomicMeasure, AtomicMeasure) {
    let ns = rng.gen_range(1..=max_src);
    let nk = rng.gen_range(1..=max_snk);
    let mut src_units: Vec<u32> = (0..ns).map(|_| rng.gen_range(1..=6)).collect();
    let mut total: u32 = src_units.iter().sum();
    if total < nk as u32 {
        src_units[0] += nk as u32 - total;
        total = nk as u32;
    }
    // random composition of `total` units into nk parts of at least 1
    let mut cuts: Vec<u32> = (1..total).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<u32> = cuts.into_iter().take(nk - 1).collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut snk_units = Vec::with_capacity(nk);
    let mut prev = 0;
    for c in cuts {
        snk_units.push(c - prev);
        prev = c;
    }
    let mut taken = Vec::new();
    let src = random_points(rng, ns, &mut taken);
    let snk = random_points(rng, nk, &mut taken);
    let mu = AtomicMeasure::from_pairs(
        &src.iter()
            .zip(&src_units)
            .map(|(p, u)| (*p, *u as f64 * 0.25))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let nu = AtomicMeasure::from_pairs(
        &snk.iter()
            .zip(&snk_units)
            .map(|(p, u)| (*p, *u as f64 * 0.25))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    (mu, nu)
}

/// Alternates between the constant-c payoff and a per-atom payoff.
pub fn random_payoff(
    rng: &mut ChaCha8Rng,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    variant: u64,
) -> PayoffSpec {
    if variant % 2 == 0 {
        PayoffSpec::constant(rng.gen_range(0.0..1.5))
    } else {
        let sv: Vec<f64> = (0..mu.atoms.len())
            .map(|_| rng.gen_range(-0.5..2.0))
            .collect();
        let kv: Vec<f64> = (0..nu.atoms.len())
            .map(|_| rng.gen_range(-0.5..2.0))
            .collect();
        PayoffSpec::per_atom(mu, nu, &sv, &kv).unwrap()
    }
}
