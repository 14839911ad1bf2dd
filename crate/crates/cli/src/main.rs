//! Command-line interface: solve, sweep, oracle, check, render.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use rotpb_core::{
    check_monotonicity, check_prop_upper_bound, check_unmoved_bound, d_alpha, default_c_grid,
    extract_structure, good_decomposition, limit_path, perturbation_certificate, run_sweep, solve,
    Error as CoreError, SignedAtomicMeasure, SolveMode, SolveReport, SweepReport,
};

use rotpb_cli::schema::{ProblemFile, Provenance, ReportBody, ReportFile, FORMAT_VERSION};
use rotpb_cli::svg;

const EXIT_CERTIFICATE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rotpb",
    version,
    about = "Branched transport with boundary payoff"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Heuristic,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Override the problem's alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the solver mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Override the heuristic seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write a report.
    Solve {
        problem: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG rendering of the optimal path.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep the constant payoff parameter c and write a report.
    Sweep {
        problem: PathBuf,
        /// Grid spec "start:stop:count" with optional "|geometric";
        /// defaults to the geometric grid 0.05 * 2^k, k = 0..11.
        #[arg(long = "c-grid")]
        c_grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Raw balanced transport cost between the problem's measures.
    Oracle {
        problem: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Validate a report against its problem file.
    Check { report: PathBuf, problem: PathBuf },
    /// Render a report to SVG.
    Render {
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Problem file for atom annotations.
        #[arg(long)]
        problem: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            problem,
            out,
            svg,
            overrides,
        } => cmd_solve(&problem, &out, svg.as_deref(), &overrides),
        Command::Sweep {
            problem,
            c_grid,
            out,
            overrides,
        } => cmd_sweep(&problem, c_grid.as_deref(), &out, &overrides),
        Command::Oracle {
            problem,
            svg,
            overrides,
        } => cmd_oracle(&problem, svg.as_deref(), &overrides),
        Command::Check { report, problem } => cmd_check(&report, &problem),
        Command::Render {
            report,
            out,
            problem,
        } => cmd_render(&report, &out, problem.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

/// ROTPB_THREADS overrides the worker pool size.
fn configure_threads() {
    if let Ok(v) = std::env::var("ROTPB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn classify(e: &anyhow::Error) -> u8 {
    if let Some(core) = e.downcast_ref::<CoreError>() {
        return match core {
            CoreError::InvalidMeasure(_)
            | CoreError::InvalidParameter(_)
            | CoreError::Unbalanced { .. }
            | CoreError::UnsupportedInput(_)
            | CoreError::PayoffDomain(_)
            | CoreError::BoundInapplicable { .. }
            | CoreError::GridTooShort { .. } => EXIT_INPUT,
            CoreError::InvalidPath(_)
            | CoreError::NotAcyclic
            | CoreError::OracleTooLarge { .. }
            | CoreError::StructureViolation(_)
            | CoreError::ConvergenceFailure { .. } => EXIT_SOLVER,
        };
    }
    EXIT_INPUT
}

fn load_problem(path: &Path) -> anyhow::Result<(ProblemFile, String)> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read problem file {}", path.display()))?;
    let problem: ProblemFile = serde_json::from_slice(&bytes)
        .with_context(|| format!("problem file {} is not schema-valid", path.display()))?;
    problem
        .validate()
        .map_err(|m| anyhow!("problem file {}: {m}", path.display()))?;
    Ok((problem, digest_of(&bytes)))
}

fn load_report(path: &Path) -> anyhow::Result<ReportFile> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read report file {}", path.display()))?;
    let report: ReportFile = serde_json::from_slice(&bytes)
        .with_context(|| format!("report file {} is not schema-valid", path.display()))?;
    if report.format_version != FORMAT_VERSION {
        return Err(anyhow!(
            "unsupported report format_version {}",
            report.format_version
        ));
    }
    Ok(report)
}

fn digest_of(bytes: &[u8]) -> String {
    format!("sha256:{}", hex_string(&Sha256::digest(bytes)))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_overrides(problem: &mut ProblemFile, overrides: &Overrides) {
    if let Some(alpha) = overrides.alpha {
        problem.alpha = alpha;
    }
    if let Some(mode) = overrides.mode {
        problem.solver.mode = match mode {
            ModeArg::Exact => SolveMode::Exact,
            ModeArg::Heuristic => SolveMode::Heuristic,
        };
    }
    if let Some(seed) = overrides.seed {
        problem.solver.seed = seed;
    }
}

fn write_report(path: &Path, report: &ReportFile) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json + "\n")
        .with_context(|| format!("cannot write report to {}", path.display()))?;
    Ok(())
}

fn cmd_solve(
    problem_path: &Path,
    out: &Path,
    svg_out: Option<&Path>,
    overrides: &Overrides,
) -> anyhow::Result<u8> {
    let (mut problem, digest) = load_problem(problem_path)?;
    apply_overrides(&mut problem, overrides);
    let mu = problem.mu()?;
    let nu = problem.nu()?;
    let payoff = problem.payoff_spec()?;
    let cfg = problem.solver_config();
    let started = Instant::now();
    let report = solve(&mu, &nu, &payoff, problem.alpha, &cfg)?;
    let wall = started.elapsed().as_secs_f64();
    println!(
        "energy {:.12}  transported {:.9}  components {}  certified {}",
        report.energy,
        report.allocation.transported_mass(),
        report.components.len(),
        report.certified
    );
    if let Some(svg_path) = svg_out {
        std::fs::write(svg_path, svg::render_solve(&report, Some(&problem)))
            .with_context(|| format!("cannot write svg to {}", svg_path.display()))?;
    }
    write_report(
        out,
        &ReportFile {
            format_version: FORMAT_VERSION,
            provenance: Provenance {
                input_digest: digest,
                solver_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_time_seconds: wall,
            },
            body: ReportBody::Solve(report),
        },
    )?;
    Ok(0)
}

fn parse_c_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let (range, flavor) = match spec.split_once('|') {
        Some((r, f)) => (r, f),
        None => (spec, "linear"),
    };
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(anyhow!(
            "c-grid spec must be start:stop:count[|geometric], got {spec:?}"
        ));
    }
    let start: f64 = parts[0].parse().context("bad c-grid start")?;
    let stop: f64 = parts[1].parse().context("bad c-grid stop")?;
    let count: usize = parts[2].parse().context("bad c-grid count")?;
    if count == 0 {
        return Err(anyhow!("c-grid count must be positive"));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    match flavor {
        "linear" => Ok((0..count)
            .map(|k| start + (stop - start) * k as f64 / (count - 1) as f64)
            .collect()),
        "geometric" => {
            if start <= 0.0 || stop <= start {
                return Err(anyhow!("geometric c-grid requires 0 < start < stop"));
            }
            let ratio = (stop / start).powf(1.0 / (count - 1) as f64);
            Ok((0..count).map(|k| start * ratio.powi(k as i32)).collect())
        }
        other => Err(anyhow!("unknown c-grid flavor {other:?}")),
    }
}

fn cmd_sweep(
    problem_path: &Path,
    c_grid: Option<&str>,
    out: &Path,
    overrides: &Overrides,
) -> anyhow::Result<u8> {
    let (mut problem, digest) = load_problem(problem_path)?;
    apply_overrides(&mut problem, overrides);
    let grid = match c_grid {
        Some(spec) => parse_c_grid(spec)?,
        None => default_c_grid(),
    };
    let mu = problem.mu()?;
    let nu = problem.nu()?;
    let cfg = problem.solver_config();
    let started = Instant::now();
    let report = run_sweep(&mu, &nu, problem.alpha, &grid, &cfg)?;
    let wall = started.elapsed().as_secs_f64();

    let violations = check_monotonicity(&report);
    println!(
        "monotonicity: {}",
        if violations.is_empty() {
            "ok".to_string()
        } else {
            format!("{} violations", violations.len())
        }
    );
    println!(
        "transport cost bounded by d_alpha: {}",
        if check_prop_upper_bound(&report, report.d_alpha_value) {
            "ok"
        } else {
            "VIOLATED"
        }
    );
    match check_unmoved_bound(
        &report,
        problem.alpha,
        problem.dimension,
        problem.domain.diameter(),
    ) {
        Ok(v) if v.is_empty() => println!("unmoved-mass bound: ok"),
        Ok(v) => println!("unmoved-mass bound: {} violations", v.len()),
        Err(_) => println!(
            "unmoved-mass bound: inapplicable (alpha <= 1 - 1/{})",
            problem.dimension
        ),
    }
    println!(
        "d_alpha {:.12}  gap at largest c {:.3e}",
        report.d_alpha_value, report.gap_at_largest_c
    );
    match limit_path(&report) {
        Ok(_) => println!("full transport reached at c = {}", grid.last().unwrap()),
        Err(_) => println!("full transport not reached on this grid"),
    }
    for (lo, hi) in report.jump_intervals() {
        println!("boundary mass jumps inside c interval ({lo}, {hi})");
    }

    write_report(
        out,
        &ReportFile {
            format_version: FORMAT_VERSION,
            provenance: Provenance {
                input_digest: digest,
                solver_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_time_seconds: wall,
            },
            body: ReportBody::Sweep(report),
        },
    )?;
    Ok(0)
}

fn cmd_oracle(
    problem_path: &Path,
    svg_out: Option<&Path>,
    overrides: &Overrides,
) -> anyhow::Result<u8> {
    let (mut problem, _) = load_problem(problem_path)?;
    apply_overrides(&mut problem, overrides);
    let mu = problem.mu()?;
    let nu = problem.nu()?;
    let cfg = problem.solver_config();
    let result = d_alpha(&mu, &nu, problem.alpha, &cfg)?;
    println!(
        "d_alpha {:.12}  certified {}  edges {}",
        result.value,
        result.certified,
        result.path.edges().len()
    );
    if let Some(svg_path) = svg_out {
        std::fs::write(svg_path, svg::render_path(&result.path, problem.alpha))
            .with_context(|| format!("cannot write svg to {}", svg_path.display()))?;
    }
    Ok(0)
}

struct CheckList {
    failures: usize,
}

impl CheckList {
    fn new() -> Self {
        CheckList { failures: 0 }
    }

    fn run(&mut self, name: &str, outcome: Result<(), String>) {
        match outcome {
            Ok(()) => println!("check {name}: ok"),
            Err(msg) => {
                self.failures += 1;
                println!("check {name}: FAIL ({msg})");
            }
        }
    }

    fn skip(&mut self, name: &str, why: &str) {
        println!("check {name}: skipped ({why})");
    }
}

fn check_solve_report(
    checks: &mut CheckList,
    report: &SolveReport,
    problem: &ProblemFile,
) -> anyhow::Result<()> {
    let mu = problem.mu()?;
    let nu = problem.nu()?;
    let payoff = problem.payoff_spec()?;

    let boundary = report.path.boundary();
    checks.run(
        "flow conservation",
        boundary.as_ref().map(|_| ()).map_err(|e| e.to_string()),
    );
    match &boundary {
        Ok(b) => {
            let target = SignedAtomicMeasure::difference(&nu, &mu)?;
            checks.run(
                "boundary feasibility (preceq nu - mu)",
                if b.preceq(&target) {
                    Ok(())
                } else {
                    Err("boundary not dominated".into())
                },
            );
        }
        Err(_) => checks.skip("boundary feasibility (preceq nu - mu)", "no boundary"),
    }
    checks.run(
        "mass bound",
        match report.path.mass_bound_holds(report.alpha) {
            Ok(true) => Ok(()),
            Ok(false) => Err("M(T) exceeds (M(dT)/2)^(1-alpha) M_alpha(T)".into()),
            Err(e) => Err(e.to_string()),
        },
    );
    checks.run(
        "good decomposition",
        good_decomposition(&report.path)
            .map_err(|e| e.to_string())
            .and_then(|d| {
                if !d.recovers_flows_exactly(&report.path) {
                    return Err(format!(
                        "flow recovery error {:.3e}",
                        d.max_recovery_error(&report.path)
                    ));
                }
                let tv = report
                    .path
                    .boundary()
                    .map_err(|e| e.to_string())?
                    .total_variation();
                let w = d.total_weight();
                if (w - tv / 2.0).abs() > 1e-9 * (1.0 + tv) {
                    return Err(format!("total weight {w} vs boundary mass/2 {}", tv / 2.0));
                }
                let cost = d.total_cost(&report.path);
                let mass = report.path.mass();
                if (cost - mass).abs() > 1e-9 * (1.0 + mass) {
                    return Err(format!("weighted length {cost} vs mass {mass}"));
                }
                Ok(())
            }),
    );
    checks.run(
        "energy reproduction",
        report
            .path
            .energy(&payoff, report.alpha)
            .map_err(|e| e.to_string())
            .and_then(|e| {
                if (e - report.energy).abs() <= 1e-9 * (1.0 + report.energy.abs()) {
                    Ok(())
                } else {
                    Err(format!("stored {} vs recomputed {e}", report.energy))
                }
            }),
    );
    if report.certified && report.alpha > 0.0 {
        checks.run(
            "component structure",
            extract_structure(report, &mu, &nu)
                .map(|_| ())
                .map_err(|e| e.to_string()),
        );
        checks.run(
            "perturbation certificate",
            if perturbation_certificate(report, &mu, &nu) {
                Ok(())
            } else {
                Err("an optimality perturbation exists".into())
            },
        );
    } else {
        checks.skip(
            "component structure",
            "requires certified report, alpha > 0",
        );
        checks.skip(
            "perturbation certificate",
            "requires certified report, alpha > 0",
        );
    }
    Ok(())
}

fn check_sweep_report(
    checks: &mut CheckList,
    report: &SweepReport,
    problem: &ProblemFile,
) -> anyhow::Result<()> {
    let mu = problem.mu()?;
    let nu = problem.nu()?;
    let target = SignedAtomicMeasure::difference(&nu, &mu)?;
    let mut record_failures = Vec::new();
    for record in &report.records {
        match record.path.boundary() {
            Ok(b) => {
                if !b.preceq(&target) {
                    record_failures.push(format!("c={}: boundary not dominated", record.c));
                }
            }
            Err(e) => record_failures.push(format!("c={}: {e}", record.c)),
        }
    }
    checks.run(
        "per-record flow conservation and feasibility",
        if record_failures.is_empty() {
            Ok(())
        } else {
            Err(record_failures.join("; "))
        },
    );
    let violations = check_monotonicity(report);
    checks.run(
        "sweep monotonicity",
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations.join("; "))
        },
    );
    checks.run(
        "transport cost bounded by d_alpha",
        if check_prop_upper_bound(report, report.d_alpha_value) {
            Ok(())
        } else {
            Err("a record exceeds d_alpha".into())
        },
    );
    match check_unmoved_bound(
        report,
        report.alpha,
        problem.dimension,
        problem.domain.diameter(),
    ) {
        Ok(v) => checks.run(
            "unmoved-mass bound",
            if v.is_empty() {
                Ok(())
            } else {
                Err(v.join("; "))
            },
        ),
        Err(_) => checks.skip("unmoved-mass bound", "alpha outside (1 - 1/m, 1)"),
    }
    Ok(())
}

fn cmd_check(report_path: &Path, problem_path: &Path) -> anyhow::Result<u8> {
    let report = load_report(report_path)?;
    let (problem, digest) = load_problem(problem_path)?;
    if report.provenance.input_digest != digest {
        return Err(anyhow!(
            "digest mismatch: report was produced from {} but problem file hashes to {digest}",
            report.provenance.input_digest
        ));
    }
    let mut checks = CheckList::new();
    match &report.body {
        ReportBody::Solve(r) => check_solve_report(&mut checks, r, &problem)?,
        ReportBody::Sweep(r) => check_sweep_report(&mut checks, r, &problem)?,
    }
    if checks.failures == 0 {
        println!("all checks passed");
        Ok(0)
    } else {
        println!("{} check(s) failed", checks.failures);
        Ok(EXIT_CERTIFICATE)
    }
}

fn cmd_render(report_path: &Path, out: &Path, problem_path: Option<&Path>) -> anyhow::Result<u8> {
    let report = load_report(report_path)?;
    let problem = match problem_path {
        Some(p) => Some(load_problem(p)?.0),
        None => None,
    };
    let svg = match &report.body {
        ReportBody::Solve(r) => svg::render_solve(r, problem.as_ref()),
        ReportBody::Sweep(r) => match r.records.last() {
            Some(rec) => svg::render_path(&rec.path, r.alpha),
            None => return Err(anyhow!("sweep report has no records")),
        },
    };
    std::fs::write(out, svg).with_context(|| format!("cannot write svg to {}", out.display()))?;
    Ok(0)
}
