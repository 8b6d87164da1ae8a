//! Batch front end: `ftnilo run <problem.json>`.
//!
//! Exit codes: 0 on success (including `no_solution` and `no_peak`
//! statuses), 2 when the problem file fails validation, 3 when a pipeline
//! fails numerically. Result files hold no timing data so that reruns are
//! byte-identical; the runtime goes to stderr.

mod problem;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::circuit::{tensorize_mixed, BondGauge, FieldTensor, TensorMode, DEFAULT_MEMORY_BUDGET};
use crate::engine::{contract, FtniloNumber, Marginal, Measure, Query};
use crate::error::{Error, Result};
use crate::grid::QuadratureRule;
use crate::kernels::DeltaKernel;
use crate::riemann::{
    build_zeta_ftn, empty_box_baseline, locate_zero, zeta_axes, ZetaRegionSpec,
};
use crate::solve::{
    forward_eval, gauge_pair_check, invert_all, invert_unique, optimize, DegeneracyReport,
    GaugeCheck, OptimizeMode, Solution, TauSchedule,
};

pub use problem::{
    load, GaugeKind, Invalid, OperatorSpec, Prepared, ProblemFile, RiemannSpec, Task,
    SCHEMA_VERSION,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ftnilo", version, about = "Field tensor network inversion and optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the task described by a problem file.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub problem: PathBuf,
    /// Result file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multiplies every axis's node count.
    #[arg(long, default_value_t = 1.0)]
    pub grid_scale: f64,
    /// Multiplies the kernel width.
    #[arg(long, default_value_t = 1.0)]
    pub kernel_scale: f64,
    #[arg(long, env = "FTNILO_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedVariable {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<QuadratureRule>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub grid_scale: f64,
    pub kernel_scale: f64,
    pub kernel: DeltaKernel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<TensorMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<ResolvedVariable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<TauSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimize_mode: Option<OptimizeMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_separation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riemann: Option<ZetaRegionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riemann_points: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiemannResult {
    pub count: f64,
    pub baseline: f64,
    /// `count / baseline`.
    pub indicator: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub im: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_loss: Option<f64>,
    /// Spread of each normalized marginal at extraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_sharpness: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauge_imag_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultFile {
    pub schema_version: u32,
    pub task: Task,
    pub status: String,
    pub config: ResolvedConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<Solution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<DegeneracyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ftnilo_number: Option<FtniloNumber>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub moments: BTreeMap<String, Moments>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauge: Option<GaugeCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riemann: Option<RiemannResult>,
    pub diagnostics: Diagnostics,
    pub csv: Vec<String>,
}

/// Writes `variable`'s marginal as a two-column CSV.
pub fn emit_marginal_csv(marginals: &[Marginal], variable: &str, path: &Path) -> Result<()> {
    let m = marginals
        .iter()
        .find(|m| m.variable == variable)
        .ok_or_else(|| Error::MissingMarginal(variable.to_string()))?;
    std::fs::write(path, m.to_csv())?;
    Ok(())
}

fn config(p: &Prepared) -> ResolvedConfig {
    let pf = &p.problem;
    let riemann = pf.riemann.as_ref().filter(|_| p.spec.is_none());
    let variables = pf
        .variables
        .iter()
        .map(|v| match p.axes.iter().find(|a| a.label() == v.name) {
            Some(a) => ResolvedVariable {
                name: v.name.clone(),
                lo: a.lo(),
                hi: a.hi(),
                points: Some(a.n_points()),
                rule: Some(a.rule()),
            },
            None => {
                let (lo, hi) = v.range.unwrap_or_default();
                ResolvedVariable {
                    name: v.name.clone(),
                    lo: lo as f64,
                    hi: hi as f64,
                    points: None,
                    rule: None,
                }
            }
        })
        .collect();
    let circuit = p.spec.is_some();
    ResolvedConfig {
        grid_scale: p.grid_scale,
        kernel_scale: p.kernel_scale,
        kernel: p.kernel,
        mode: circuit.then_some(p.mode),
        measure: (pf.task == Task::Count).then_some(pf.measure),
        variables,
        tau: circuit.then_some(pf.tau),
        target: pf.target.clone(),
        point: pf.point.clone(),
        schedule: (pf.task == Task::Optimize)
            .then(|| pf.schedule.clone().unwrap_or_default()),
        optimize_mode: (pf.task == Task::Optimize).then_some(pf.optimize_mode),
        min_separation: pf.min_separation,
        riemann: riemann.map(RiemannSpec::region),
        riemann_points: riemann.map(|r| scaled_points(r.points, p.grid_scale)),
    }
}

fn scaled_points(points: (usize, usize), scale: f64) -> (usize, usize) {
    let f = |n: usize| ((n as f64) * scale).round().max(2.0) as usize;
    (f(points.0), f(points.1))
}

fn tensor(p: &Prepared) -> Result<FieldTensor> {
    let spec = p.spec.as_ref().expect("circuit tasks carry a spec");
    let ranges: Vec<(&str, i64, i64)> = p
        .ranges
        .iter()
        .map(|(n, lo, hi)| (n.as_str(), *lo, *hi))
        .collect();
    tensorize_mixed(spec, &p.axes, &ranges, p.kernel, p.mode, DEFAULT_MEMORY_BUDGET)
}

fn moments(marginals: &[Marginal]) -> BTreeMap<String, Moments> {
    marginals
        .iter()
        .map(|m| {
            (
                m.variable.clone(),
                Moments {
                    mu0: m.moment(0),
                    mu1: m.moment(1),
                    mu2: m.moment(2),
                },
            )
        })
        .collect()
}

fn result(p: &Prepared, status: &str) -> ResultFile {
    ResultFile {
        schema_version: SCHEMA_VERSION,
        task: p.problem.task,
        status: status.to_string(),
        config: config(p),
        solution: None,
        report: None,
        ftnilo_number: None,
        moments: BTreeMap::new(),
        forward: None,
        gauge: None,
        riemann: None,
        diagnostics: Diagnostics::default(),
        csv: Vec::new(),
    }
}

fn write_marginals(
    p: &Prepared,
    marginals: &[Marginal],
    csv_base: &Path,
    out: &mut ResultFile,
) -> Result<()> {
    for v in &p.problem.marginals {
        let path = with_suffix(csv_base, &format!("{v}.csv"));
        emit_marginal_csv(marginals, v, &path)?;
        out.csv.push(path.display().to_string());
    }
    Ok(())
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the prepared task. `csv_base` is the path prefix for emitted CSVs.
pub fn execute(p: &Prepared, csv_base: &Path) -> Result<ResultFile> {
    let pf = &p.problem;
    match pf.task {
        Task::RiemannCount | Task::RiemannLocate => {
            let r = pf.riemann.as_ref().expect("validated");
            let region = r.region();
            let (nx, ny) = scaled_points(r.points, p.grid_scale);
            let (x, y) = zeta_axes(&region, nx, ny)?;
            let t = build_zeta_ftn(&region, &x, &y, p.kernel)?;
            let c = t.count();
            let baseline = empty_box_baseline(&region, x.n_points(), y.n_points(), p.kernel)?;
            let mut out = result(p, "counted");
            out.diagnostics.peak_density = Some(c.peak_density);
            let mut rr = RiemannResult {
                count: c.count,
                baseline,
                indicator: c.count / baseline,
                re: None,
                im: None,
            };
            if pf.task == Task::RiemannLocate {
                match locate_zero(&region, &x, &y, p.kernel) {
                    Ok(z) => {
                        out.status = "located".into();
                        rr.re = Some(z.re);
                        rr.im = Some(z.im);
                    }
                    Err(Error::NoPeak) => out.status = "no_peak".into(),
                    Err(e) => return Err(e),
                }
            }
            out.riemann = Some(rr);
            if r.heatmap {
                let path = with_suffix(csv_base, "density.csv");
                std::fs::write(&path, t.to_csv())?;
                out.csv.push(path.display().to_string());
            }
            Ok(out)
        }
        Task::Invert | Task::Count => {
            let t = tensor(p)?;
            let y = pf.target.as_deref().expect("validated");
            let measure = if pf.task == Task::Count { pf.measure } else { Measure::Counting };
            let r = contract(&t, &Query::project(&t, y)?.with_measure(measure))?;
            let mut out = result(p, "counted");
            out.ftnilo_number = Some(r.ftnilo());
            out.moments = moments(&r.marginals);
            out.diagnostics.truncation_loss = Some(r.truncation_loss);
            out.diagnostics.peak_sharpness =
                Some(r.marginals.iter().map(|m| m.spread().unwrap_or(0.0)).collect());
            if pf.task == Task::Count {
                if r.total() < 0.25 {
                    out.status = "no_solution".into();
                }
            } else {
                match invert_unique(&t, y) {
                    Ok(s) => {
                        out.status = "unique".into();
                        out.solution = Some(s);
                    }
                    Err(Error::NoSolution { .. }) => out.status = "no_solution".into(),
                    Err(e) => return Err(e),
                }
            }
            write_marginals(p, &r.marginals, csv_base, &mut out)?;
            Ok(out)
        }
        Task::InvertAll => {
            let t = tensor(p)?;
            let y = pf.target.as_deref().expect("validated");
            let report = invert_all(&t, y, pf.min_separation.expect("validated"))?;
            let mut out = result(
                p,
                if report.solutions.is_empty() { "no_solution" } else { "solutions" },
            );
            out.ftnilo_number = Some(report.total);
            out.diagnostics.truncation_loss = Some(t.truncation_loss());
            if !pf.marginals.is_empty() {
                let r = contract(&t, &Query::project(&t, y)?)?;
                write_marginals(p, &r.marginals, csv_base, &mut out)?;
            }
            out.report = Some(report);
            Ok(out)
        }
        Task::Optimize => {
            let t = tensor(p)?;
            let schedule = pf.schedule.clone().unwrap_or_default();
            let s = optimize(&t, &schedule, pf.optimize_mode)?;
            let mut out = result(p, "optimized");
            out.diagnostics.truncation_loss = Some(t.truncation_loss());
            out.diagnostics.peak_sharpness = Some(s.sharpness.clone());
            out.solution = Some(s);
            Ok(out)
        }
        Task::Forward => {
            let t = tensor(p)?;
            let values = forward_eval(&t, pf.point.as_deref().expect("validated"))?;
            let mut out = result(p, "evaluated");
            out.diagnostics.truncation_loss = Some(t.truncation_loss());
            out.forward = Some(values);
            Ok(out)
        }
        Task::GaugeCheck => {
            let t = tensor(p)?;
            let g = pf.gauge.as_ref().expect("validated");
            let gauge = match (g.kind, g.k_max, g.n_k) {
                (GaugeKind::Identity, _, _) => BondGauge::Identity,
                (GaugeKind::Fourier, Some(k_max), Some(n_k)) => BondGauge::Fourier { k_max, n_k },
                (GaugeKind::Fourier, _, _) => t.default_fourier(&g.signal)?,
            };
            let check = gauge_pair_check(&t, pf.target.as_deref().expect("validated"), &g.signal, gauge)?;
            let mut out = result(p, "checked");
            out.diagnostics.truncation_loss = Some(t.truncation_loss());
            out.diagnostics.gauge_imag_residual = Some(check.imag_residual);
            out.gauge = Some(check);
            Ok(out)
        }
    }
}

/// Runs one problem file and returns the process exit code.
pub fn run(args: &RunArgs) -> u8 {
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_INVALID;
        }
        // a pool built earlier in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let shown = args.problem.display();
    let text = match std::fs::read_to_string(&args.problem) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{shown}: {e}");
            return EXIT_INVALID;
        }
    };
    let prepared = match load(&text, args.grid_scale, args.kernel_scale) {
        Ok(p) => p,
        Err(inv) => {
            eprintln!("{shown}:{inv}");
            return EXIT_INVALID;
        }
    };
    let csv_base = match &args.out {
        Some(o) => o.with_extension(""),
        None => args.problem.with_extension(""),
    };
    let start = Instant::now();
    let out = match execute(&prepared, &csv_base) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            return EXIT_NUMERIC;
        }
    };
    let mut json = serde_json::to_string_pretty(&out).expect("result serializes");
    json.push('\n');
    let written = match &args.out {
        Some(path) => std::fs::write(path, json),
        None => {
            print!("{json}");
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: IoError: {e}");
        return EXIT_NUMERIC;
    }
    eprintln!(
        "{}: status {} in {:.3} s",
        shown,
        out.status,
        start.elapsed().as_secs_f64()
    );
    EXIT_OK
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { EXIT_OK });
        }
    };
    match cli.command {
        Command::Run(a) => ExitCode::from(run(&a)),
    }
}
