//! Problem-file schema and its validation into ready-to-run inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitSpec, LogicalOperator, Signal, TensorMode};
use crate::engine::Measure;
use crate::error::Error;
use crate::expr::parse;
use crate::grid::{GridAxis, QuadratureRule};
use crate::kernels::{DeltaKernel, KernelFamily};
use crate::riemann::{Series, Topology, ZetaRegionSpec};
use crate::solve::{OptimizeMode, TauSchedule};

pub const SCHEMA_VERSION: u32 = 1;

/// Composed mode is chosen automatically up to this many grid nodes.
const AUTO_COMPOSED_NODES: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Invert,
    InvertAll,
    Count,
    Optimize,
    Forward,
    GaugeCheck,
    RiemannCount,
    RiemannLocate,
}

impl Task {
    fn is_riemann(self) -> bool {
        matches!(self, Task::RiemannCount | Task::RiemannLocate)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub points: Option<usize>,
    #[serde(default)]
    pub rule: QuadratureRule,
    /// Integer range summed with unit weights instead of a grid.
    pub range: Option<(i64, i64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub name: String,
    pub init: Option<f64>,
    pub range: Option<(i64, i64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub signal: String,
    pub expr: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub expr: String,
    pub bound: f64,
    #[serde(default = "yes")]
    pub strict: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub name: String,
    pub reads: Option<String>,
    #[serde(default)]
    pub transfers: Vec<TransferSpec>,
    pub cost: Option<String>,
    pub factor: Option<String>,
    pub gate: Option<GateSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default)]
    pub family: KernelFamily,
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeKind {
    Identity,
    Fourier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeSpec {
    pub signal: String,
    pub kind: GaugeKind,
    pub k_max: Option<f64>,
    pub n_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiemannSpec {
    pub series: Series,
    pub trunc_n: usize,
    pub re_range: (f64, f64),
    pub im_range: (f64, f64),
    #[serde(default)]
    pub exclusion_band: f64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default = "riemann_points")]
    pub points: (usize, usize),
    #[serde(default = "riemann_width")]
    pub kernel_width: f64,
    /// Also write the `(re, im, density)` heatmap CSV.
    #[serde(default)]
    pub heatmap: bool,
}

fn riemann_points() -> (usize, usize) {
    (301, 301)
}

fn riemann_width() -> f64 {
    0.1
}

impl RiemannSpec {
    pub fn region(&self) -> ZetaRegionSpec {
        ZetaRegionSpec {
            series: self.series,
            trunc_n: self.trunc_n,
            re_range: self.re_range,
            im_range: self.im_range,
            exclusion_band: self.exclusion_band,
            topology: self.topology,
        }
    }
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub task: Task,
    #[serde(default)]
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub operators: Vec<OperatorSpec>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub target: Option<Vec<f64>>,
    pub point: Option<Vec<f64>>,
    pub schedule: Option<TauSchedule>,
    #[serde(default)]
    pub optimize_mode: OptimizeMode,
    pub min_separation: Option<f64>,
    pub kernel: Option<KernelSpec>,
    pub mode: Option<TensorMode>,
    #[serde(default)]
    pub measure: Measure,
    pub gauge: Option<GaugeSpec>,
    pub riemann: Option<RiemannSpec>,
    /// Variables whose marginal CSV should be written.
    #[serde(default)]
    pub marginals: Vec<String>,
}

/// Validation failure anchored at a 1-based line and column.
#[derive(Debug, Clone, PartialEq)]
pub struct Invalid {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

/// Position of `offset` in `text`, both 1-based.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    /// Anchors at the first string literal equal to `literal`, shifted by
    /// `inner` bytes into it; falls back to the start of the file.
    fn at(&self, literal: &str, inner: usize, message: String) -> Invalid {
        let quoted = serde_json::to_string(literal).unwrap_or_default();
        let offset = self
            .text
            .find(&quoted)
            .map(|i| i + 1 + inner)
            .unwrap_or(0);
        let (line, column) = line_col(self.text, offset);
        Invalid { line, column, message }
    }

    fn key(&self, key: &str, message: String) -> Invalid {
        let quoted = format!("\"{key}\"");
        let offset = self.text.find(&quoted).unwrap_or(0);
        let (line, column) = line_col(self.text, offset);
        Invalid { line, column, message }
    }
}

/// Everything a task needs, resolved from the problem file.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: ProblemFile,
    pub spec: Option<CircuitSpec>,
    pub axes: Vec<GridAxis>,
    pub ranges: Vec<(String, i64, i64)>,
    pub kernel: DeltaKernel,
    pub mode: TensorMode,
    pub grid_scale: f64,
    pub kernel_scale: f64,
}

fn check_expr(loc: &Locator, src: &str) -> Result<(), Invalid> {
    match parse(src) {
        Ok(_) => Ok(()),
        Err(Error::Parse { offset, message, expected }) => Err(loc.at(
            src,
            offset,
            format!("{message} (expected one of: {})", expected.join(", ")),
        )),
        Err(e) => Err(loc.at(src, 0, e.to_string())),
    }
}

fn build_spec(p: &ProblemFile, loc: &Locator) -> Result<CircuitSpec, Invalid> {
    let names: Vec<&str> = p.variables.iter().map(|v| v.name.as_str()).collect();
    let mut spec = CircuitSpec::new(&names).with_tau(p.tau);
    for s in &p.signals {
        spec = spec.signal(match s.range {
            Some((lo, hi)) => Signal::discrete(&s.name, s.init, lo, hi),
            None => Signal::continuous(&s.name, s.init),
        });
    }
    for (k, v) in &p.constants {
        spec = spec.constant(k, *v);
    }
    let mut sources: Vec<&str> = Vec::new();
    for o in &p.operators {
        let mut op = LogicalOperator::new(&o.name);
        if let Some(r) = &o.reads {
            op = op.reads(r);
        }
        let bad = |src: &str, e: Error| loc.at(src, 0, e.to_string());
        for t in &o.transfers {
            sources.push(&t.expr);
            check_expr(loc, &t.expr)?;
            op = op.transfer(&t.signal, &t.expr).map_err(|e| bad(&t.expr, e))?;
        }
        if let Some(c) = &o.cost {
            sources.push(c);
            check_expr(loc, c)?;
            op = op.cost(c).map_err(|e| bad(c, e))?;
        }
        if let Some(f) = &o.factor {
            sources.push(f);
            check_expr(loc, f)?;
            op = op.factor(f).map_err(|e| bad(f, e))?;
        }
        if let Some(g) = &o.gate {
            sources.push(&g.expr);
            check_expr(loc, &g.expr)?;
            op = op.gate(&g.expr, g.bound, g.strict).map_err(|e| bad(&g.expr, e))?;
        }
        spec = spec.op(op);
    }
    for o in &p.outputs {
        spec = spec.output(o);
    }
    if let Err(e) = spec.compile() {
        let message = format!("{}: {e}", e.name());
        let name = match &e {
            Error::UnknownVariable(n) | Error::UnboundVariable(n) => Some(n.clone()),
            _ => None,
        };
        if let Some(n) = name {
            // anchor at the first expression that mentions the name
            for src in &sources {
                if let Ok(ex) = parse(src) {
                    if ex.variables().iter().any(|v| v == &n) {
                        let inner = src.find(n.as_str()).unwrap_or(0);
                        return Err(loc.at(src, inner, message));
                    }
                }
            }
            return Err(loc.at(&n, 0, message));
        }
        return Err(loc.key("operators", message));
    }
    Ok(spec)
}

fn require<T>(v: &Option<T>, field: &str, task: Task, loc: &Locator) -> Result<(), Invalid> {
    if v.is_none() {
        return Err(loc.key(
            "task",
            format!("field `{field}` is required for task {task:?}"),
        ));
    }
    Ok(())
}

/// Parses and validates a problem file.
pub fn load(text: &str, grid_scale: f64, kernel_scale: f64) -> Result<Prepared, Invalid> {
    let loc = Locator { text };
    let p: ProblemFile = serde_json::from_str(text).map_err(|e| Invalid {
        line: e.line().max(1),
        column: e.column().max(1),
        message: e.to_string(),
    })?;
    if p.schema_version != SCHEMA_VERSION {
        return Err(loc.key(
            "schema_version",
            format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", p.schema_version),
        ));
    }
    for (flag, v) in [("--grid-scale", grid_scale), ("--kernel-scale", kernel_scale)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Invalid {
                line: 1,
                column: 1,
                message: format!("{flag} must be positive, got {v}"),
            });
        }
    }
    if p.task.is_riemann() {
        require(&p.riemann, "riemann", p.task, &loc)?;
        let r = p.riemann.as_ref().expect("checked above");
        r.region()
            .validate()
            .map_err(|e| loc.key("riemann", e.to_string()))?;
        let kernel = DeltaKernel::gaussian(r.kernel_width * kernel_scale)
            .map_err(|e| loc.key("kernel_width", e.to_string()))?;
        if r.points.0 < 2 || r.points.1 < 2 {
            return Err(loc.key("points", "riemann grids need at least 2 points per axis".into()));
        }
        return Ok(Prepared {
            problem: p,
            spec: None,
            axes: Vec::new(),
            ranges: Vec::new(),
            kernel,
            mode: TensorMode::Composed,
            grid_scale,
            kernel_scale,
        });
    }

    if p.variables.is_empty() {
        return Err(loc.key("task", "field `variables` must list at least one variable".into()));
    }
    match p.task {
        Task::Invert | Task::InvertAll | Task::Count | Task::GaugeCheck => {
            require(&p.target, "target", p.task, &loc)?
        }
        Task::Forward => require(&p.point, "point", p.task, &loc)?,
        _ => {}
    }
    if p.task == Task::GaugeCheck {
        require(&p.gauge, "gauge", p.task, &loc)?;
    }
    if p.task == Task::InvertAll {
        require(&p.min_separation, "min_separation", p.task, &loc)?;
    }
    let spec = build_spec(&p, &loc)?;
    let n_out = p.outputs.len();
    for (field, v) in [("target", &p.target), ("point", &p.point)] {
        if let Some(v) = v {
            let want = if field == "target" { n_out } else { p.variables.len() };
            if v.len() != want {
                return Err(loc.key(field, format!("`{field}` has {} values, expected {want}", v.len())));
            }
        }
    }

    let mut axes = Vec::new();
    let mut ranges = Vec::new();
    let mut nodes: usize = 1;
    for v in &p.variables {
        match (v.range, v.lo, v.hi, v.points) {
            (Some((lo, hi)), None, None, None) => {
                if lo > hi {
                    return Err(loc.at(&v.name, 0, format!("empty range {lo}..={hi}")));
                }
                nodes = nodes.saturating_mul((hi - lo + 1) as usize);
                ranges.push((v.name.clone(), lo, hi));
            }
            (None, Some(lo), Some(hi), Some(n)) => {
                let n = ((n as f64) * grid_scale).round().max(2.0) as usize;
                let a = GridAxis::new(v.name.clone(), lo, hi, n, v.rule)
                    .map_err(|e| loc.at(&v.name, 0, e.to_string()))?;
                nodes = nodes.saturating_mul(a.n_points());
                axes.push(a);
            }
            _ => {
                return Err(loc.at(
                    &v.name,
                    0,
                    format!(
                        "variable `{}` needs either `range` or all of `lo`, `hi`, `points`",
                        v.name
                    ),
                ))
            }
        }
    }
    for s in &p.signals {
        if let Some((lo, hi)) = s.range {
            ranges.push((s.name.clone(), lo, hi));
        }
    }
    for m in &p.marginals {
        if !p.variables.iter().any(|v| &v.name == m) {
            return Err(loc.at(m, 0, format!("marginal requested for unknown variable `{m}`")));
        }
        if !matches!(p.task, Task::Invert | Task::InvertAll | Task::Count) {
            return Err(loc.at(m, 0, Error::MissingMarginal(m.clone()).to_string()));
        }
    }

    let finest = axes
        .iter()
        .map(GridAxis::cell_width)
        .fold(f64::INFINITY, f64::min);
    let (family, width) = match &p.kernel {
        Some(k) => (k.family, k.width),
        None => (KernelFamily::Gaussian, None),
    };
    let width = match width {
        Some(w) => w,
        None if finest.is_finite() => 3.0 * finest,
        None => 1.0,
    };
    let kernel = DeltaKernel::new(family, width * kernel_scale)
        .map_err(|e| loc.key("kernel", e.to_string()))?;
    let mode = p.mode.unwrap_or(if nodes <= AUTO_COMPOSED_NODES {
        TensorMode::Composed
    } else {
        TensorMode::Grid
    });
    if p.task == Task::GaugeCheck && mode != TensorMode::Grid {
        return Err(loc.key("mode", "gauge_check needs grid mode".into()));
    }
    Ok(Prepared {
        problem: p,
        spec: Some(spec),
        axes,
        ranges,
        kernel,
        mode,
        grid_scale,
        kernel_scale,
    })
}
