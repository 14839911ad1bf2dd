//! Problem and report file formats (JSON, format_version 1).

use serde::{Deserialize, Serialize};

use rotpb_core::{
    AtomicMeasure, PayoffSpec, RelaxationConfig, SolveMode, SolveReport, SolverConfig, SweepReport,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format_version: u32,
    pub dimension: usize,
    pub alpha: f64,
    pub domain: DomainBox,
    pub sources: Vec<AtomSpec>,
    pub sinks: Vec<AtomSpec>,
    pub payoff: PayoffSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl DomainBox {
    pub fn diameter(&self) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, coords: &[f64]) -> bool {
        coords.len() == self.min.len()
            && coords
                .iter()
                .zip(self.min.iter().zip(&self.max))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub position: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSection {
    ConstantC {
        c: f64,
    },
    PerAtom {
        source_values: Vec<f64>,
        sink_values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_mode")]
    pub mode: SolveMode,
    #[serde(default = "default_oracle_limit")]
    pub oracle_limit: usize,
    #[serde(default = "default_multistarts")]
    pub multistarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

fn default_mode() -> SolveMode {
    SolveMode::Exact
}
fn default_oracle_limit() -> usize {
    6
}
fn default_multistarts() -> usize {
    12
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            mode: default_mode(),
            oracle_limit: default_oracle_limit(),
            multistarts: default_multistarts(),
            seed: 0,
            tolerances: ToleranceSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default = "default_position_tol")]
    pub position: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_position_tol() -> f64 {
    1e-9
}
fn default_max_iterations() -> usize {
    10_000
}
fn default_epsilon() -> f64 {
    1e-12
}

impl Default for ToleranceSection {
    fn default() -> Self {
        ToleranceSection {
            position: default_position_tol(),
            max_iterations: default_max_iterations(),
            epsilon: default_epsilon(),
        }
    }
}

impl ProblemFile {
    pub fn validate(&self) -> Result<(), String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if !(self.dimension == 2 || self.dimension == 3) {
            return Err(format!("dimension must be 2 or 3, got {}", self.dimension));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if self.domain.min.len() != self.dimension || self.domain.max.len() != self.dimension {
            return Err("domain box dimension mismatch".into());
        }
        if self
            .domain
            .min
            .iter()
            .zip(&self.domain.max)
            .any(|(a, b)| a >= b)
        {
            return Err("domain box must have positive extent".into());
        }
        for (name, atoms) in [("sources", &self.sources), ("sinks", &self.sinks)] {
            for (i, a) in atoms.iter().enumerate() {
                if a.position.len() != self.dimension {
                    return Err(format!("{name}[{i}]: position dimension mismatch"));
                }
                if !a.mass.is_finite() || a.mass <= 0.0 {
                    return Err(format!("{name}[{i}]: mass must be positive"));
                }
                if !self.domain.contains(&a.position) {
                    return Err(format!("{name}[{i}]: atom outside the domain box"));
                }
            }
        }
        if let PayoffSection::PerAtom {
            source_values,
            sink_values,
        } = &self.payoff
        {
            if source_values.len() != self.sources.len() || sink_values.len() != self.sinks.len() {
                return Err("per_atom payoff must cover every atom exactly".into());
            }
        }
        Ok(())
    }

    pub fn mu(&self) -> Result<AtomicMeasure, rotpb_core::Error> {
        AtomicMeasure::from_pairs(
            &self
                .sources
                .iter()
                .map(|a| (a.position.as_slice(), a.mass))
                .collect::<Vec<_>>(),
        )
    }

    pub fn nu(&self) -> Result<AtomicMeasure, rotpb_core::Error> {
        AtomicMeasure::from_pairs(
            &self
                .sinks
                .iter()
                .map(|a| (a.position.as_slice(), a.mass))
                .collect::<Vec<_>>(),
        )
    }

    pub fn payoff_spec(&self) -> Result<PayoffSpec, rotpb_core::Error> {
        match &self.payoff {
            PayoffSection::ConstantC { c } => Ok(PayoffSpec::constant(*c)),
            PayoffSection::PerAtom {
                source_values,
                sink_values,
            } => PayoffSpec::per_atom(&self.mu()?, &self.nu()?, source_values, sink_values),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            relaxation: RelaxationConfig {
                position_tol: self.solver.tolerances.position,
                max_iterations: self.solver.tolerances.max_iterations,
                epsilon: self.solver.tolerances.epsilon,
                multistarts: self.solver.multistarts,
                seed: self.solver.seed,
            },
            mode: self.solver.mode,
            oracle_limit: self.solver.oracle_limit,
            domain_diam: Some(self.domain.diameter()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub input_digest: String,
    pub solver_version: String,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportBody {
    Solve(SolveReport),
    Sweep(SweepReport),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: ReportBody,
}
