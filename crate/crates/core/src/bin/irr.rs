//! `irr`: construct, evaluate, optimize and verify irrigation flows.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use irrigation::construct::{dyadic_interpolation, square_to_dirac_with, ConstructionConfig};
use irrigation::energy::{energy_breakdown, total_energy, EnergyBreakdown};
use irrigation::flow::{samples, Violation};
use irrigation::optimizer::{
    equipartition_report, landscape, optimize_positions, rt_sweep, shrink_competitor_test,
    topology_search, Constraints, EquipartitionEntry, OptimizerConfig, ResidualStats, ShrinkReport,
};
use irrigation::potential::{dyadic_pairs, holder_shells, KernelSpec};
use irrigation::regularity::{default_window, dyadic_radii, min_spacing, regularity_report};
use irrigation::transport::bb_gap;
use irrigation::{validate_flow, AtomicMeasure, Error, PolygonalFlow};

const EXIT_MALFORMED: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Tolerances of the verify suite.
const BB_TOL: f64 = 1e-9;
const SPLIT_TOL: f64 = 1e-10;
const LAMBDA_TOL: f64 = 1e-6;
const CV_TOL: f64 = 0.02;
const GAP_TOL: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(
    name = "irr",
    version,
    about = "Branched transport flows: build, optimize, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit a flow built by one of the explicit constructions.
    Construct(ConstructArgs),
    /// Energy breakdown of a flow as CSV.
    Evaluate(EvaluateArgs),
    /// Minimize the energy of a flow.
    Optimize(OptimizeArgs),
    /// Table of best energies over leaf boxes and horizons.
    Sweep(SweepArgs),
    /// Regularity report and Hölder shells of a flow's boundary measure.
    Analyze(AnalyzeArgs),
    /// Run the invariant suite on a flow.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Serialize)]
struct ConstructArgs {
    /// Uniform grid on the unit square branching into a Dirac at the origin.
    #[arg(long, conflicts_with_all = ["v_flow", "from"])]
    square_to_dirac: bool,
    /// Symmetric V: leaves at (±distance, 0) merging at the origin at `tau`.
    #[arg(long)]
    v_flow: bool,
    /// Dyadic interpolation from this measure (JSON) ...
    #[arg(long, requires = "to")]
    from: Option<PathBuf>,
    /// ... to this measure (JSON).
    #[arg(long, requires = "from")]
    to: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// Leaf radius written into the flow.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Side of the square containing both measures.
    #[arg(long, default_value_t = 2.0)]
    side: f64,
    #[arg(long, default_value_t = 1.0)]
    distance: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    input: PathBuf,
    /// Interval start (defaults to the flow's start time).
    #[arg(long)]
    a: Option<f64>,
    /// Interval end (defaults to the horizon).
    #[arg(long)]
    b: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct OptimizeArgs {
    input: PathBuf,
    #[arg(long)]
    fix_boundary: bool,
    #[arg(long)]
    fix_root: bool,
    #[arg(long)]
    zero_barycenter: bool,
    /// Leave the boundary term out of the objective.
    #[arg(long)]
    no_boundary_term: bool,
    /// Alternate descent with topology moves.
    #[arg(long)]
    topology: bool,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    grad_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the flow's leaf radius.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Flow output; the trace goes to `<output>.trace.csv`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    /// Box half-widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    r_list: Vec<f64>,
    /// Horizons, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    t_list: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    leaves: usize,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    grad_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    input: PathBuf,
    /// Exponents for the Ahlfors constants, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,1.6,2")]
    alpha: Vec<f64>,
    /// Ball radii, comma separated (dyadic between spacing and diameter if absent).
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Exponent of the Hölder quotient of the potential.
    #[arg(long, default_value_t = 1.5)]
    holder_alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON; Hölder shells go to `<output>.holder.csv`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    input: PathBuf,
    /// Also enforce the identities of converged minimizers.
    #[arg(long)]
    minimizer: bool,
    /// With `--minimizer`: leaves were free, so also enforce the landscape
    /// identity and non-improvement by shrink competitors.
    #[arg(long, requires = "minimizer")]
    free_boundary: bool,
    /// Shrink factor for the competitor checks of `--free-boundary`.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Malformed(String),
    Violation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Malformed(e.to_string())
    }
}

type CmdResult = std::result::Result<Outcome, Failure>;

/// Files written by a command plus the echo that goes into its manifest.
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: Value,
    seed: Option<u64>,
    exit: u8,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: &'a Value,
    seed: Option<u64>,
    tool_version: &'a str,
    wall_time_s: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_MALFORMED } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("IRR_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let start = Instant::now();
    let (name, result) = match &cli.command {
        Command::Construct(a) => ("construct", construct(a)),
        Command::Evaluate(a) => ("evaluate", evaluate(a)),
        Command::Optimize(a) => ("optimize", optimize(a)),
        Command::Sweep(a) => ("sweep", sweep(a)),
        Command::Analyze(a) => ("analyze", analyze(a)),
        Command::Verify(a) => ("verify", verify(a)),
    };
    match result {
        Ok(out) => {
            if let Err(e) = write_manifest(name, &out, start.elapsed().as_secs_f64()) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_MALFORMED);
            }
            ExitCode::from(out.exit)
        }
        Err(Failure::Malformed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_MALFORMED)
        }
        Err(Failure::Violation(m)) => {
            eprintln!("violation: {m}");
            ExitCode::from(EXIT_VIOLATION)
        }
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn emit(path: Option<&Path>, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            write_atomic(p, contents)
                .map_err(|e| Failure::Malformed(format!("{}: {e}", p.display())))?;
            written.push(p.to_path_buf());
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_manifest(name: &str, out: &Outcome, wall: f64) -> std::io::Result<()> {
    let Some(first) = out.outputs.first() else {
        return Ok(());
    };
    let show = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect();
    let manifest = RunManifest {
        command: name,
        args: std::env::args().skip(1).collect(),
        inputs: show(&out.inputs),
        outputs: show(&out.outputs),
        config: &out.config,
        seed: out.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_time_s: wall,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    write_atomic(&sibling(first, ".manifest.json"), &(text + "\n"))
}

fn read_flow(path: &Path) -> Result<PolygonalFlow, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Malformed(format!("{}: {e}", path.display())))?;
    Ok(PolygonalFlow::from_json(&text)?)
}

fn read_measure(path: &Path) -> Result<AtomicMeasure, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Malformed(format!("{}: {e}", path.display())))?;
    Ok(AtomicMeasure::from_json(&text)?)
}

fn check_eps(eps: f64) -> Result<f64, Failure> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(eps)
    } else {
        Err(Failure::Malformed(format!("invalid leaf radius {eps}")))
    }
}

fn echo<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).unwrap_or(Value::Null)
}

fn construct(a: &ConstructArgs) -> CmdResult {
    let cfg = ConstructionConfig::new(a.levels);
    let mut inputs = Vec::new();
    let mut flow = if a.v_flow {
        samples::v_flow(a.distance, a.tau, a.horizon, a.epsilon.unwrap_or(0.05))
    } else if let (Some(from), Some(to)) = (&a.from, &a.to) {
        inputs.extend([from.clone(), to.clone()]);
        dyadic_interpolation(
            &read_measure(from)?,
            &read_measure(to)?,
            a.horizon,
            a.side,
            &cfg,
        )?
    } else {
        square_to_dirac_with(&cfg)?
    };
    if let Some(eps) = a.epsilon {
        flow.eps = check_eps(eps)?;
    }
    let mut outputs = Vec::new();
    emit(a.output.as_deref(), &(flow.to_json()? + "\n"), &mut outputs)?;
    Ok(Outcome {
        inputs,
        outputs,
        config: echo(a),
        seed: None,
        exit: 0,
    })
}

fn evaluate(a: &EvaluateArgs) -> CmdResult {
    let flow = read_flow(&a.input)?;
    let br: EnergyBreakdown = match (a.a, a.b) {
        (None, None) => total_energy(&flow)?,
        (lo, hi) => energy_breakdown(
            &flow,
            lo.unwrap_or(flow.start_time()),
            hi.unwrap_or(flow.horizon()),
        )?,
    };
    let mut outputs = Vec::new();
    let text = format!("{}\n{}\n", EnergyBreakdown::CSV_HEADER, br.csv_row());
    emit(a.output.as_deref(), &text, &mut outputs)?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs,
        config: echo(a),
        seed: None,
        exit: 0,
    })
}

fn optimize(a: &OptimizeArgs) -> CmdResult {
    let mut flow = read_flow(&a.input)?;
    if let Some(eps) = a.epsilon {
        flow.eps = check_eps(eps)?;
    }
    let cfg = OptimizerConfig {
        max_iters: a.max_iters,
        grad_tol: a.grad_tol,
        seed: a.seed,
        topology_moves: a.topology,
        merge_tol: OptimizerConfig::default()
            .merge_tol
            .min(0.5 * flow.eps.max(1e-300)),
        ..OptimizerConfig::default()
    };
    let c = Constraints {
        fix_boundary: a.fix_boundary,
        fix_root: a.fix_root,
        zero_barycenter: a.zero_barycenter,
        boundary_term: !a.no_boundary_term,
        ..Constraints::default()
    };
    let (out, trace) = if a.topology {
        topology_search(&flow, &cfg, &c)?
    } else {
        optimize_positions(&flow, &cfg, &c)?
    };
    let mut outputs = Vec::new();
    emit(Some(&a.output), &(out.to_json()? + "\n"), &mut outputs)?;
    emit(
        Some(&sibling(&a.output, ".trace.csv")),
        &trace.to_csv(),
        &mut outputs,
    )?;
    if !trace.converged {
        eprintln!(
            "not converged: projected gradient {:.3e} above {:.3e}",
            trace.rows.last().map_or(f64::NAN, |r| r.grad_norm),
            a.grad_tol
        );
    }
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs,
        config: json!({ "args": echo(a), "optimizer": echo(&cfg), "constraints": echo(&c) }),
        seed: Some(a.seed),
        exit: if trace.converged {
            0
        } else {
            EXIT_NOT_CONVERGED
        },
    })
}

fn sweep(a: &SweepArgs) -> CmdResult {
    let cfg = OptimizerConfig {
        max_iters: a.max_iters,
        grad_tol: a.grad_tol,
        seed: a.seed,
        topology_moves: true,
        merge_tol: OptimizerConfig::default().merge_tol.min(0.5 * a.epsilon),
        ..OptimizerConfig::default()
    };
    let table = rt_sweep(&a.r_list, &a.t_list, a.leaves, a.epsilon, &cfg)?;
    let mut outputs = Vec::new();
    emit(a.output.as_deref(), &table.to_csv(), &mut outputs)?;
    if let Some(p) = &a.output {
        let diag: Vec<Value> = table
            .rows
            .iter()
            .map(|r| json!({ "R": r.r, "T": r.t, "converged": r.converged, "diagnostics": r.diagnostics }))
            .collect();
        let text = serde_json::to_string_pretty(&diag).map_err(Error::from)? + "\n";
        emit(Some(&sibling(p, ".diagnostics.json")), &text, &mut outputs)?;
    }
    Ok(Outcome {
        inputs: Vec::new(),
        outputs,
        config: json!({ "args": echo(a), "optimizer": echo(&cfg) }),
        seed: Some(a.seed),
        exit: 0,
    })
}

fn analyze(a: &AnalyzeArgs) -> CmdResult {
    let flow = read_flow(&a.input)?;
    let mu = flow.boundary_measure()?;
    let radii = match &a.radii {
        Some(r) => r.clone(),
        None => {
            let (lo, hi) = default_window(&mu);
            let lo = if lo > 0.0 {
                lo
            } else {
                min_spacing(&mu).max(1e-6)
            };
            dyadic_radii(lo, hi.max(lo))
        }
    };
    let report = match regularity_report(&mu, &a.alpha, &radii, None) {
        // small supports: widen the fit window to the full range of scales
        Err(Error::DegenerateWindow(_)) if mu.len() > 1 => {
            let wide = (min_spacing(&mu), mu.diameter());
            regularity_report(&mu, &a.alpha, &radii, Some(wide))?
        }
        r => r?,
    };
    let spec = if mu.atoms().iter().all(|at| at.radius > 0.0) {
        KernelSpec::disk()
    } else {
        KernelSpec::pure()
    };
    let c = mu.barycenter()?;
    let half = 0.5 * mu.diameter().max(1e-12);
    let pairs = dyadic_pairs(c, half, 8, 16, a.seed);
    let shells = match holder_shells(&mu, a.holder_alpha, &pairs, &spec) {
        Ok(s) => s,
        // sampled points can hit an atom exactly in pure mode
        Err(Error::SingularPoint(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut outputs = Vec::new();
    emit(
        a.output.as_deref(),
        &(report.to_json()? + "\n"),
        &mut outputs,
    )?;
    let mut csv = String::from("distance,max_quotient\n");
    for (d, q) in &shells {
        csv.push_str(&format!("{d:.17e},{q:.17e}\n"));
    }
    match &a.output {
        Some(p) => emit(Some(&sibling(p, ".holder.csv")), &csv, &mut outputs)?,
        None => print!("{csv}"),
    }
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs,
        config: echo(a),
        seed: Some(a.seed),
        exit: 0,
    })
}

#[derive(Serialize)]
struct VerifyReport {
    ok: bool,
    failures: Vec<String>,
    violations: Vec<Violation>,
    energy_split_residual: Option<f64>,
    barycenter_shift_residual: Option<f64>,
    min_bb_gap: Option<f64>,
    equipartition: Vec<EquipartitionEntry>,
    landscape: Option<ResidualStats>,
    shrink: Vec<ShrinkReport>,
}

/// At most this many consecutive breakpoint intervals get a BB check.
const MAX_BB_INTERVALS: usize = 16;

fn verify(a: &VerifyArgs) -> CmdResult {
    let flow = read_flow(&a.input)?;
    let validation = validate_flow(&flow);
    let mut report = VerifyReport {
        ok: true,
        failures: Vec::new(),
        violations: validation.violations.clone(),
        energy_split_residual: None,
        barycenter_shift_residual: None,
        min_bb_gap: None,
        equipartition: Vec::new(),
        landscape: None,
        shrink: Vec::new(),
    };
    if !validation.ok {
        report.failures.push(format!(
            "{} validation violations",
            validation.violations.len()
        ));
    } else {
        run_checks(&flow, a, &mut report)?;
    }
    report.ok = report.failures.is_empty();
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    let mut outputs = Vec::new();
    emit(a.output.as_deref(), &text, &mut outputs)?;
    if !report.ok {
        for v in &report.violations {
            eprintln!(
                "{:?} nodes {:?} edges {:?} magnitude {:.3e}",
                v.kind, v.nodes, v.edges, v.magnitude
            );
        }
        return Err(Failure::Violation(report.failures.join("; ")));
    }
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs,
        config: echo(a),
        seed: None,
        exit: 0,
    })
}

fn run_checks(
    flow: &PolygonalFlow,
    a: &VerifyArgs,
    report: &mut VerifyReport,
) -> Result<(), Failure> {
    if flow.edges().is_empty() {
        return Ok(());
    }
    let (start, end) = (flow.start_time(), flow.horizon());
    let br = energy_breakdown(flow, start, end)?;
    let split = (br.internal - br.perimeter - br.kinetic).abs();
    report.energy_split_residual = Some(split);
    if split > SPLIT_TOL * (1.0 + br.internal.abs()) {
        report.failures.push(format!("I − P − E = {split:.3e}"));
    }
    let (shifted, path) = flow.barycenter_shift()?;
    let centered = energy_breakdown(&shifted, start, end)?;
    let shift = (br.kinetic - centered.kinetic - flow.total_mass() * path.kinetic_integral()).abs();
    report.barycenter_shift_residual = Some(shift);
    if shift > SPLIT_TOL * (1.0 + br.internal.abs()) {
        report
            .failures
            .push(format!("barycenter-shift residual {shift:.3e}"));
    }
    let bps = flow.breakpoints();
    let mut intervals = vec![(start, end)];
    let stride = (bps.len().saturating_sub(1) / MAX_BB_INTERVALS).max(1);
    for w in bps.windows(2).step_by(stride) {
        intervals.push((w[0], w[1]));
    }
    let mut min_gap = f64::INFINITY;
    for (lo, hi) in intervals {
        match bb_gap(flow, lo, hi) {
            Ok(g) => min_gap = min_gap.min(g),
            Err(Error::TooLarge(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if min_gap.is_finite() {
        report.min_bb_gap = Some(min_gap);
        if min_gap < -BB_TOL {
            report
                .failures
                .push(format!("Benamou–Brenier gap {min_gap:.3e}"));
        }
    }
    if flow.root().is_err() {
        return Ok(());
    }
    report.equipartition = equipartition_report(flow)?;
    let boundary = flow.eps > 0.0;
    if let Ok(l) = landscape(flow, boundary) {
        report.landscape = Some(l.residual_stats);
    }
    if !a.minimizer {
        return Ok(());
    }
    for e in &report.equipartition {
        if e.lambda > LAMBDA_TOL * e.internal.abs().max(1e-300) {
            report.failures.push(format!(
                "Λ = {:.3e} at node {} (I = {:.3e})",
                e.lambda, e.node, e.internal
            ));
        }
    }
    if a.free_boundary {
        if let Some(l) = &report.landscape {
            if l.cv > CV_TOL {
                report
                    .failures
                    .push(format!("landscape variation {:.3e}", l.cv));
            }
        }
    }
    if a.free_boundary && boundary {
        for e in report.equipartition.clone() {
            let r = shrink_competitor_test(flow, e.node, a.lambda, &KernelSpec::disk())?;
            if r.gap < -GAP_TOL * r.energy.abs() {
                report.failures.push(format!(
                    "shrink competitor improves by {:.3e} at node {}",
                    -r.gap, r.node
                ));
            }
            report.shrink.push(r);
        }
    }
    Ok(())
}
