//! Sweep of the constant payoff parameter c: per-c certified solves, the
//! monotonicity and bound checks they must satisfy, and the large-c limit
//! path approximating the unconstrained optimal transport path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::dalpha::{c_m_alpha, d_alpha};
use crate::error::{Error, Result};
use crate::measures::{AtomicMeasure, MASS_TOL};
use crate::path::{PayoffSpec, TransportPath};
use crate::solve::{solve, SolveReport};

/// Slack for the monotonicity comparisons along the grid.
const MONO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub c: f64,
    pub energy: f64,
    pub m_alpha: f64,
    pub boundary_mass: f64,
    pub unmoved_mass: f64,
    pub path: TransportPath,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub alpha: f64,
    /// Records sorted by c ascending.
    pub records: Vec<SweepRecord>,
    /// Transport cost between the full measures, from the same oracle.
    pub d_alpha_value: f64,
    /// |m_alpha at the largest c - d_alpha_value|.
    pub gap_at_largest_c: f64,
    /// Smallest positive unused mass over the slack-structured allocation
    /// family (informational; the unrestricted infimum is degenerate).
    pub restricted_s: Option<f64>,
    pub certified: bool,
}

/// The default geometric grid 0.05 * 2^k, k = 0..11.
pub fn default_c_grid() -> Vec<f64> {
    (0..12).map(|k| 0.05 * 2f64.powi(k)).collect()
}

impl SweepReport {
    /// Grid intervals over which the transported boundary mass jumps; the
    /// thresholds lie somewhere inside them. No bisection is attempted since
    /// multi-atom instances can have several thresholds.
    pub fn jump_intervals(&self) -> Vec<(f64, f64)> {
        self.records
            .windows(2)
            .filter(|w| (w[1].boundary_mass - w[0].boundary_mass).abs() > MONO_TOL)
            .map(|w| (w[0].c, w[1].c))
            .collect()
    }
}

/// Solves the constant-payoff problem at every grid value, in ascending
/// order, and appends the oracle transport cost for the gap comparison.
pub fn run_sweep(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    alpha: f64,
    c_grid: &[f64],
    cfg: &SolverConfig,
) -> Result<SweepReport> {
    let (sa, sb) = (mu.total_mass(), nu.total_mass());
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::Unbalanced {
            source_mass: sa,
            sink_mass: sb,
        });
    }
    if c_grid.is_empty() || c_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "c grid must be nonempty and strictly ascending".into(),
        ));
    }
    let reports: Vec<SolveReport> = c_grid
        .par_iter()
        .map(|&c| solve(mu, nu, &PayoffSpec::constant(c), alpha, cfg))
        .collect::<Result<Vec<_>>>()?;
    let total = mu.total_mass();
    let mut records = Vec::with_capacity(reports.len());
    let mut certified = true;
    for (&c, report) in c_grid.iter().zip(reports) {
        certified &= report.certified;
        let boundary = report.path.boundary()?;
        records.push(SweepRecord {
            c,
            energy: report.energy,
            m_alpha: report.path.m_alpha(alpha)?,
            boundary_mass: boundary.total_variation(),
            unmoved_mass: total - report.allocation.transported_mass(),
            path: report.path,
        });
    }
    let oracle = d_alpha(mu, nu, alpha, cfg)?;
    let gap = (records.last().map(|r| r.m_alpha).unwrap_or(0.0) - oracle.value).abs();
    let restricted_s = if certified {
        let mu_q = crate::dalpha::quantize_measure(mu)?;
        let nu_q = crate::dalpha::quantize_measure(nu)?;
        crate::solve::restricted_unused_infimum(&mu_q, &nu_q)
    } else {
        None
    };
    Ok(SweepReport {
        alpha,
        records,
        d_alpha_value: oracle.value,
        gap_at_largest_c: gap,
        restricted_s,
        certified: certified && oracle.certified,
    })
}

/// Violations of the expected monotone behavior along the grid: energy
/// nonincreasing, transport cost and boundary mass nondecreasing.
pub fn check_monotonicity(report: &SweepReport) -> Vec<String> {
    let mut violations = Vec::new();
    for w in report.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.energy > a.energy + MONO_TOL {
            violations.push(format!(
                "energy increased from {} at c={} to {} at c={}",
                a.energy, a.c, b.energy, b.c
            ));
        }
        if b.m_alpha < a.m_alpha - MONO_TOL {
            violations.push(format!(
                "transport cost decreased from {} at c={} to {} at c={}",
                a.m_alpha, a.c, b.m_alpha, b.c
            ));
        }
        if b.boundary_mass < a.boundary_mass - MONO_TOL {
            violations.push(format!(
                "boundary mass decreased from {} at c={} to {} at c={}",
                a.boundary_mass, a.c, b.boundary_mass, b.c
            ));
        }
    }
    violations
}

/// Checks the unmoved-mass decay bound
/// `|mu - mu*_c| <= (C_{m,alpha} diam / (2c))^(1/(1-alpha))` on every
/// positive-c record.
pub fn check_unmoved_bound(
    report: &SweepReport,
    alpha: f64,
    m: usize,
    diam: f64,
) -> Result<Vec<String>> {
    let constant = c_m_alpha(alpha, m)?;
    let mut violations = Vec::new();
    for r in report.records.iter().filter(|r| r.c > 0.0) {
        let bound = (constant * diam / (2.0 * r.c)).powf(1.0 / (1.0 - alpha));
        if r.unmoved_mass > bound + 1e-9 {
            violations.push(format!(
                "unmoved mass {} exceeds bound {} at c={}",
                r.unmoved_mass, bound, r.c
            ));
        }
    }
    Ok(violations)
}

/// Every record's transport cost must stay below the full transport cost.
pub fn check_prop_upper_bound(report: &SweepReport, d_alpha_value: f64) -> bool {
    report
        .records
        .iter()
        .all(|r| r.m_alpha <= d_alpha_value + MONO_TOL)
}

/// The large-c limit: the path of the largest grid value, provided it
/// reached full transport.
pub fn limit_path(report: &SweepReport) -> Result<&TransportPath> {
    let last = report
        .records
        .last()
        .ok_or_else(|| Error::InvalidParameter("empty sweep".into()))?;
    if last.unmoved_mass > MASS_TOL {
        return Err(Error::GridTooShort { largest_c: last.c });
    }
    Ok(&last.path)
}
