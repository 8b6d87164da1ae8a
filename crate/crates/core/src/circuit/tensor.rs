//! Field tensors: a circuit discretized on quadrature grids (grid mode) or
//! evaluated as exact closures over the variable grid (composed mode).

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Amplitude, CircuitSpec, CompiledCircuit, SignalDomain};
use crate::error::{Error, Result};
use crate::expr::Interval;
use crate::grid::{GridAxis, IndexSet, QuadratureRule};
use crate::kernels::DeltaKernel;

/// Default cap on stored tensor entries (f64 values).
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 26;

/// Signal boxes are the propagated transfer image padded by this many kernel
/// widths on each side.
const SIGNAL_PAD_WIDTHS: f64 = 6.0;
/// Node sweeps used when interval bounds are unusable stop at this size.
const SWEEP_LIMIT: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TensorMode {
    #[default]
    Grid,
    Composed,
}

/// A resolution-of-identity pair inserted on an internal bond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BondGauge {
    /// `A = B = δ`: the discrete identity.
    Identity,
    /// `A(r,k) = e^{ikr}/√(2π)`, `B = conj(A)`, with the frequency axis
    /// `[-k_max, k_max]` sampled at `n_k` trapezoid nodes.
    Fourier { k_max: f64, n_k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalAxis {
    pub name: String,
    pub set: IndexSet,
}

#[derive(Debug, Clone)]
pub(crate) struct BondLayout {
    pub signals: Vec<usize>,
    pub dims: Vec<usize>,
    pub strides: Vec<usize>,
    pub size: usize,
    /// Quadrature weight of each bond state for the integration performed by
    /// the site this bond feeds. Passed-through signals carry a Kronecker
    /// delta instead and contribute no weight.
    pub weight: Vec<f64>,
}

impl BondLayout {
    pub fn component(&self, index: usize, p: usize) -> usize {
        (index / self.strides[p]) % self.dims[p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum OutSource {
    /// Written by the site; the row stores a kernel list for it.
    Written(usize),
    /// Carried through unchanged from this position of the input bond.
    Pass(usize),
}

#[derive(Debug, Clone, Copy)]
struct RowKernel {
    start: u32,
    len: u32,
    off: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct GridSite {
    pub var: usize,
    pub n_x: usize,
    pub sources: Vec<OutSource>,
    pub amps: Vec<Amplitude>,
    n_written: usize,
    kernels: Vec<RowKernel>,
    values: Vec<f64>,
    /// Smallest cost among rows that pass their gates.
    pub min_cost: f64,
    /// Live rows whose discrete write leaves the signal's range, sorted by
    /// row: `(row, signal, value)`. They emit nothing; reaching one is an
    /// error raised by the contraction.
    pub out_of_range: Vec<(usize, usize, f64)>,
}

impl GridSite {
    /// Calls `f(out_index, kernel_weight)` for every output bond state the
    /// row maps to.
    pub fn for_each_out(
        &self,
        row: usize,
        b_in: usize,
        inb: &BondLayout,
        outb: &BondLayout,
        mut f: impl FnMut(usize, f64),
    ) {
        let m = self.sources.len();
        if m == 0 {
            f(0, 1.0);
            return;
        }
        let kern = |q: usize| {
            let k = self.kernels[row * self.n_written + q];
            (k.start as usize, &self.values[k.off..k.off + k.len as usize])
        };
        if m == 1 {
            match self.sources[0] {
                OutSource::Written(q) => {
                    let (start, vals) = kern(q);
                    for (i, v) in vals.iter().enumerate() {
                        f(start + i, *v);
                    }
                }
                OutSource::Pass(p) => f(inb.component(b_in, p), 1.0),
            }
            return;
        }
        let mut lists: Vec<(usize, &[f64])> = Vec::with_capacity(m);
        for src in &self.sources {
            match *src {
                OutSource::Written(q) => {
                    let (start, vals) = kern(q);
                    if vals.is_empty() {
                        return;
                    }
                    lists.push((start, vals));
                }
                OutSource::Pass(p) => lists.push((inb.component(b_in, p), &[1.0])),
            }
        }
        let mut counter = vec![0usize; m];
        loop {
            let mut idx = 0;
            let mut w = 1.0;
            for p in 0..m {
                let (start, vals) = lists[p];
                idx += (start + counter[p]) * outb.strides[p];
                w *= vals[counter[p]];
            }
            f(idx, w);
            let mut p = m;
            loop {
                if p == 0 {
                    return;
                }
                p -= 1;
                counter[p] += 1;
                if counter[p] < lists[p].1.len() {
                    break;
                }
                counter[p] = 0;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GridNetwork {
    pub signal_sets: Vec<Option<IndexSet>>,
    pub bonds: Vec<BondLayout>,
    pub sites: Vec<GridSite>,
    pub truncation_loss: f64,
}

#[derive(Debug)]
pub(crate) struct NodeTable {
    pub dims: Vec<usize>,
    pub strides: Vec<usize>,
    pub n_nodes: usize,
    pub n_out: usize,
    pub outputs: Vec<f64>,
    pub amps: Vec<Amplitude>,
    pub counting_all: OnceLock<std::result::Result<Arc<Vec<f64>>, Error>>,
}

impl NodeTable {
    pub fn index_of(&self, node: usize, var: usize) -> usize {
        (node / self.strides[var]) % self.dims[var]
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GaugeInsertion {
    pub bond: usize,
    pub position: usize,
    pub gauge: BondGauge,
}

/// A circuit tensorized over concrete index sets.
#[derive(Debug, Clone)]
pub struct FieldTensor {
    spec: CircuitSpec,
    circuit: Arc<CompiledCircuit>,
    sets: Vec<IndexSet>,
    domains: Vec<SignalDomain>,
    kernel: DeltaKernel,
    mode: TensorMode,
    budget: usize,
    pub(crate) grid: Option<Arc<GridNetwork>>,
    pub(crate) table: Option<Arc<NodeTable>>,
    pub(crate) gauge: Option<GaugeInsertion>,
}

impl FieldTensor {
    /// Tensorizes `spec` with one index set per variable (declaration order)
    /// and one domain per signal.
    pub fn build(
        spec: &CircuitSpec,
        sets: Vec<IndexSet>,
        domains: Vec<SignalDomain>,
        kernel: DeltaKernel,
        mode: TensorMode,
        budget: usize,
    ) -> Result<Self> {
        let circuit = Arc::new(spec.compile()?);
        if sets.len() != circuit.n_vars() {
            return Err(Error::Domain(format!(
                "{} index sets for {} variables",
                sets.len(),
                circuit.n_vars()
            )));
        }
        if domains.len() != circuit.n_signals() {
            return Err(Error::Domain(format!(
                "{} signal domains for {} signals",
                domains.len(),
                circuit.n_signals()
            )));
        }
        let mut t = Self {
            spec: spec.clone(),
            circuit,
            sets,
            domains,
            kernel,
            mode,
            budget,
            grid: None,
            table: None,
            gauge: None,
        };
        match mode {
            TensorMode::Grid => t.grid = Some(Arc::new(t.build_grid()?)),
            TensorMode::Composed => t.table = Some(Arc::new(t.build_table()?)),
        }
        Ok(t)
    }

    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn circuit(&self) -> &CompiledCircuit {
        &self.circuit
    }

    pub fn index_sets(&self) -> &[IndexSet] {
        &self.sets
    }

    pub fn index_set(&self, var: &str) -> Result<&IndexSet> {
        Ok(&self.sets[self.circuit.var_index(var)?])
    }

    pub fn variables(&self) -> &[String] {
        &self.spec.variables
    }

    pub fn kernel(&self) -> DeltaKernel {
        self.kernel
    }

    pub fn mode(&self) -> TensorMode {
        self.mode
    }

    pub fn memory_budget(&self) -> usize {
        self.budget
    }

    pub fn signal_domains(&self) -> &[SignalDomain] {
        &self.domains
    }

    /// Largest fraction of a delta's unit mass lost at a signal-box edge.
    pub fn truncation_loss(&self) -> f64 {
        self.grid.as_ref().map_or(0.0, |g| g.truncation_loss)
    }

    /// Discretized signal axes (grid mode only).
    pub fn signal_axes(&self) -> Vec<SignalAxis> {
        let Some(g) = &self.grid else { return Vec::new() };
        g.signal_sets
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.clone().map(|set| SignalAxis {
                    name: self.spec.signals[i].name.clone(),
                    set,
                })
            })
            .collect()
    }

    /// Same circuit and index sets with a different kernel.
    pub fn with_kernel(&self, kernel: DeltaKernel) -> Result<Self> {
        if self.mode == TensorMode::Composed && self.gauge.is_none() {
            let mut t = self.clone();
            t.kernel = kernel;
            return Ok(t);
        }
        Self::build(
            &self.spec,
            self.sets.clone(),
            self.domains.clone(),
            kernel,
            self.mode,
            self.budget,
        )
    }

    pub fn with_index_sets(&self, sets: Vec<IndexSet>) -> Result<Self> {
        Self::build(
            &self.spec,
            sets,
            self.domains.clone(),
            self.kernel,
            self.mode,
            self.budget,
        )
    }

    pub fn with_mode(&self, mode: TensorMode) -> Result<Self> {
        if mode == self.mode {
            return Ok(self.clone());
        }
        Self::build(
            &self.spec,
            self.sets.clone(),
            self.domains.clone(),
            self.kernel,
            mode,
            self.budget,
        )
    }

    pub fn with_memory_budget(&self, budget: usize) -> Result<Self> {
        Self::build(
            &self.spec,
            self.sets.clone(),
            self.domains.clone(),
            self.kernel,
            self.mode,
            budget,
        )
    }

    /// Inserts a gauge pair on the first bond that carries `signal`.
    pub fn with_gauge(&self, signal: &str, gauge: BondGauge) -> Result<Self> {
        let Some(g) = &self.grid else {
            return Err(Error::Mode(
                "gauge insertion needs a grid-mode tensor; composed mode has no bonds".into(),
            ));
        };
        let s = self.circuit.signal_index(signal)?;
        let (bond, position) = g
            .bonds
            .iter()
            .enumerate()
            .find_map(|(k, b)| b.signals.iter().position(|&x| x == s).map(|p| (k, p)))
            .ok_or_else(|| Error::Mode(format!("signal `{signal}` is not carried on any bond")))?;
        if !matches!(g.signal_sets[s], Some(IndexSet::Continuous(_))) {
            return Err(Error::Mode(format!("signal `{signal}` is not continuous")));
        }
        if let BondGauge::Fourier { k_max, n_k } = gauge {
            if !(k_max > 0.0) || n_k < 2 {
                return Err(Error::Domain(format!(
                    "frequency box needs k_max > 0 and n_k >= 2, got {k_max}, {n_k}"
                )));
            }
        }
        let mut t = self.clone();
        t.gauge = Some(GaugeInsertion {
            bond,
            position,
            gauge,
        });
        Ok(t)
    }

    pub fn gauge(&self) -> Option<BondGauge> {
        self.gauge.map(|g| g.gauge)
    }

    /// Nominal frequency box for a Fourier gauge on `signal`: spacing from the
    /// bond's length, cutoff from its cell width.
    pub fn default_fourier(&self, signal: &str) -> Result<BondGauge> {
        let s = self.circuit.signal_index(signal)?;
        let axis = self
            .grid
            .as_ref()
            .and_then(|g| g.signal_sets[s].as_ref())
            .and_then(IndexSet::axis)
            .ok_or_else(|| Error::Mode(format!("signal `{signal}` has no continuous bond axis")))?;
        let dk = 2.0 * std::f64::consts::PI / (2.0 * axis.length());
        let k_max = std::f64::consts::PI / (2.0 * axis.cell_width());
        let n_k = (2.0 * k_max / dk).ceil() as usize + 1;
        Ok(BondGauge::Fourier { k_max, n_k })
    }

    /// Values of all variables at a composed-mode node.
    pub(crate) fn node_point(&self, table: &NodeTable, node: usize) -> Vec<f64> {
        (0..self.sets.len())
            .map(|v| self.sets[v].node(table.index_of(node, v)))
            .collect()
    }

    /// `sqrt(det(J Jᵀ))` (or `JᵀJ` when there are more outputs than
    /// variables) of the projected outputs with respect to the continuous
    /// variables, by central differences.
    pub fn counting_weight(&self, x: &[f64], projected: &[bool]) -> Result<f64> {
        let cont: Vec<usize> = (0..self.sets.len())
            .filter(|&v| self.sets[v].is_continuous())
            .collect();
        let outs: Vec<usize> = (0..projected.len()).filter(|&i| projected[i]).collect();
        if cont.is_empty() || outs.is_empty() {
            return Ok(1.0);
        }
        let mut jac = vec![vec![0.0; cont.len()]; outs.len()];
        let mut probe = x.to_vec();
        for (c, &v) in cont.iter().enumerate() {
            let h = 1e-6 * x[v].abs().max(1.0);
            probe[v] = x[v] + h;
            let plus = self.circuit.evaluate(&probe).map(|e| e.outputs);
            probe[v] = x[v] - h;
            let minus = self.circuit.evaluate(&probe).map(|e| e.outputs);
            probe[v] = x[v];
            let (hi, lo, span) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m, 2.0 * h),
                (Ok(p), Err(_)) => (p, self.circuit.evaluate(x)?.outputs, h),
                (Err(_), Ok(m)) => (self.circuit.evaluate(x)?.outputs, m, h),
                (Err(e), Err(_)) => return Err(e),
            };
            for (r, &o) in outs.iter().enumerate() {
                jac[r][c] = (hi[o] - lo[o]) / span;
            }
        }
        Ok(gram_sqrt_det(&jac))
    }

    fn build_table(&self) -> Result<NodeTable> {
        let dims: Vec<usize> = self.sets.iter().map(IndexSet::len).collect();
        let (strides, n_nodes) = strides_of(&dims);
        let n_out = self.circuit.outputs().len();
        let needed = n_nodes.saturating_mul(n_out + 3);
        if needed > self.budget {
            return Err(Error::MemoryBudget {
                needed,
                budget: self.budget,
            });
        }
        let outputs = self.circuit.outputs().to_vec();
        let rows: Vec<(Vec<f64>, Amplitude)> = (0..n_nodes)
            .into_par_iter()
            .map(|node| {
                let x: Vec<f64> = (0..dims.len())
                    .map(|v| self.sets[v].node((node / strides[v]) % dims[v]))
                    .collect();
                let e = self.circuit.evaluate(&x)?;
                for (k, &o) in outputs.iter().enumerate() {
                    if let SignalDomain::Discrete { lo, hi } = self.domains[o] {
                        check_discrete(&self.spec.signals[o].name, e.outputs[k], lo, hi)?;
                    }
                }
                Ok((e.outputs, e.amplitude))
            })
            .collect::<Result<_>>()?;
        let mut flat = Vec::with_capacity(n_nodes * n_out);
        let mut amps = Vec::with_capacity(n_nodes);
        for (o, a) in rows {
            flat.extend(o);
            amps.push(a);
        }
        Ok(NodeTable {
            dims,
            strides,
            n_nodes,
            n_out,
            outputs: flat,
            amps,
            counting_all: OnceLock::new(),
        })
    }

    fn build_grid(&self) -> Result<GridNetwork> {
        let c = &*self.circuit;
        let ns = c.n_signals();
        let n_sites = c.sites().len();
        let on_bond: Vec<bool> = (0..ns)
            .map(|s| (0..=n_sites).any(|k| c.live(k).contains(&s)))
            .collect();

        let needs_bounds = (0..ns)
            .any(|s| on_bond[s] && self.domains[s] == SignalDomain::Continuous);
        let bounds = if needs_bounds {
            self.signal_bounds()?
        } else {
            vec![None; ns]
        };
        let w = self.kernel.width;
        let mut signal_sets = vec![None; ns];
        for s in 0..ns {
            if !on_bond[s] {
                continue;
            }
            signal_sets[s] = Some(match self.domains[s] {
                SignalDomain::Discrete { lo, hi } => IndexSet::discrete(lo, hi)?,
                SignalDomain::Continuous => {
                    let iv = bounds[s].expect("bounds computed for continuous bond signals");
                    let lo = iv.lo - SIGNAL_PAD_WIDTHS * w;
                    let hi = iv.hi + SIGNAL_PAD_WIDTHS * w;
                    let cells = ((hi - lo) / (w / 3.0)).ceil().max(1.0) as usize;
                    IndexSet::Continuous(GridAxis::new(
                        self.spec.signals[s].name.clone(),
                        lo,
                        hi,
                        cells + 1,
                        QuadratureRule::Trapezoid,
                    )?)
                }
            });
        }

        let mut bonds = Vec::with_capacity(n_sites + 1);
        for k in 0..=n_sites {
            let signals = c.live(k).to_vec();
            let dims: Vec<usize> = signals
                .iter()
                .map(|&s| signal_sets[s].as_ref().map_or(1, IndexSet::len))
                .collect();
            let (strides, size) = strides_of(&dims);
            let weighted: Vec<bool> = signals
                .iter()
                .map(|s| {
                    k == n_sites || c.written(k).contains(s) || !c.live(k + 1).contains(s)
                })
                .collect();
            let needed = size;
            if needed > self.budget {
                return Err(Error::MemoryBudget {
                    needed,
                    budget: self.budget,
                });
            }
            let weight = (0..size)
                .map(|b| {
                    let mut wt = 1.0;
                    for (p, &s) in signals.iter().enumerate() {
                        if weighted[p] {
                            let set = signal_sets[s].as_ref().expect("bond signal has an axis");
                            wt *= set.weight((b / strides[p]) % dims[p]);
                        }
                    }
                    wt
                })
                .collect();
            bonds.push(BondLayout {
                signals,
                dims,
                strides,
                size,
                weight,
            });
        }

        let mut sites = Vec::with_capacity(n_sites);
        let mut loss: f64 = 0.0;
        for k in 0..n_sites {
            let (site, l) = self.build_site(k, &bonds[k], &bonds[k + 1], &signal_sets)?;
            loss = loss.max(l);
            sites.push(site);
        }
        Ok(GridNetwork {
            signal_sets,
            bonds,
            sites,
            truncation_loss: loss,
        })
    }

    fn build_site(
        &self,
        k: usize,
        inb: &BondLayout,
        outb: &BondLayout,
        signal_sets: &[Option<IndexSet>],
    ) -> Result<(GridSite, f64)> {
        let c = &*self.circuit;
        let nv = c.n_vars();
        let site = &c.sites()[k];
        let set = &self.sets[site.var];
        let n_x = set.len();
        let rows = inb.size.saturating_mul(n_x);

        let mut written = Vec::new();
        let sources: Vec<OutSource> = outb
            .signals
            .iter()
            .map(|s| {
                if c.written(k).contains(s) {
                    written.push(*s);
                    OutSource::Written(written.len() - 1)
                } else {
                    let p = inb
                        .signals
                        .iter()
                        .position(|x| x == s)
                        .expect("live signal not written here comes from the input bond");
                    OutSource::Pass(p)
                }
            })
            .collect();

        let radius = self.kernel.support_radius();
        let per_row: usize = 4 + written
            .iter()
            .map(|&s| match &signal_sets[s] {
                Some(IndexSet::Continuous(a)) => match radius {
                    Some(r) => ((2.0 * r / a.cell_width()).ceil() as usize + 2).min(a.n_points()),
                    None => a.n_points(),
                },
                _ => 1,
            })
            .sum::<usize>();
        let needed = rows.saturating_mul(per_row);
        if needed > self.budget {
            return Err(Error::MemoryBudget {
                needed,
                budget: self.budget,
            });
        }

        let kernel = self.kernel;
        type Row = (Amplitude, Vec<(usize, Vec<f64>)>, f64, bool, Option<(usize, f64)>);
        let eval_row = |row: usize| -> Result<Row> {
            let b_in = row / n_x;
            let xi = row % n_x;
            let mut state = c.initial_state();
            state[site.var] = set.node(xi);
            for (p, &s) in inb.signals.iter().enumerate() {
                let set = signal_sets[s].as_ref().expect("bond signal has an axis");
                state[nv + s] = set.node(inb.component(b_in, p));
            }
            let amp = c.run_ops(site.ops.clone(), &mut state)?;
            if amp.pass && !(amp.cost.is_finite() && amp.factor.is_finite()) {
                return Err(Error::DivergentAmplitude(format!(
                    "non-finite amplitude term at {} = {}",
                    self.spec.variables[site.var],
                    set.node(xi)
                )));
            }
            let mut lists = Vec::with_capacity(written.len());
            let mut loss: f64 = 0.0;
            let mut clamped = false;
            let mut violation = None;
            for &s in &written {
                let g = state[nv + s];
                let name = &self.spec.signals[s].name;
                match &signal_sets[s] {
                    Some(IndexSet::Discrete { lo, hi, .. }) => {
                        if !(amp.pass && amp.factor != 0.0) {
                            lists.push((0, Vec::new()));
                        } else if check_discrete(name, g, *lo, *hi).is_err() {
                            violation.get_or_insert((s, g));
                            lists.push((0, Vec::new()));
                        } else {
                            lists.push(((g as i64 - lo) as usize, vec![1.0]));
                        }
                    }
                    Some(IndexSet::Continuous(axis)) => {
                        if !g.is_finite() {
                            return Err(Error::Domain(format!(
                                "signal `{name}` is not finite ({g})"
                            )));
                        }
                        let gc = g.clamp(axis.lo(), axis.hi());
                        clamped |= gc != g;
                        if !(amp.pass && amp.factor != 0.0) {
                            lists.push((0, Vec::new()));
                            continue;
                        }
                        let (start, vals) = kernel_row(&kernel, axis, gc);
                        let mass: f64 = vals
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * axis.weights()[start + i])
                            .sum();
                        loss = loss.max(1.0 - mass);
                        lists.push((start, vals));
                    }
                    _ => unreachable!("written bond signals have index sets"),
                }
            }
            Ok((amp, lists, loss, clamped, violation))
        };
        let evaluated: Vec<_> = (0..rows)
            .into_par_iter()
            .map(eval_row)
            .collect::<Result<_>>()?;

        let n_written = written.len();
        let mut amps = Vec::with_capacity(rows);
        let mut kernels = Vec::with_capacity(rows * n_written);
        let mut values = Vec::new();
        let mut loss: f64 = 0.0;
        let mut n_clamped = 0usize;
        let mut min_cost = f64::INFINITY;
        let mut out_of_range = Vec::new();
        for (row, (amp, lists, l, clamped, violation)) in evaluated.into_iter().enumerate() {
            if let Some((s, g)) = violation {
                out_of_range.push((row, s, g));
            }
            if amp.pass && amp.factor != 0.0 {
                min_cost = min_cost.min(amp.cost);
            }
            amps.push(amp);
            loss = loss.max(l);
            n_clamped += clamped as usize;
            for (start, vals) in lists {
                kernels.push(RowKernel {
                    start: start as u32,
                    len: vals.len() as u32,
                    off: values.len(),
                });
                values.extend(vals);
            }
        }
        if n_clamped > 0 {
            log::warn!(
                "site {k}: {n_clamped} transfer values fell outside their signal box and were clamped"
            );
        }
        Ok((
            GridSite {
                var: site.var,
                n_x,
                sources,
                amps,
                n_written,
                kernels,
                values,
                min_cost,
                out_of_range,
            },
            loss,
        ))
    }

    /// Hull of every value each signal takes when written, by interval
    /// propagation, falling back to a node sweep when intervals blow up.
    fn signal_bounds(&self) -> Result<Vec<Option<Interval>>> {
        match self.interval_bounds() {
            Some(b) => Ok(b),
            None => self.sweep_bounds(),
        }
    }

    fn interval_bounds(&self) -> Option<Vec<Option<Interval>>> {
        let spec = &self.spec;
        let mut cur: HashMap<String, Interval> = spec
            .constants
            .iter()
            .map(|(k, v)| (k.clone(), Interval::point(*v)))
            .collect();
        for s in &spec.signals {
            if let Some(v) = s.init {
                cur.insert(s.name.clone(), Interval::point(v));
            }
        }
        for (v, set) in spec.variables.iter().zip(&self.sets) {
            let (lo, hi) = set.bounds();
            cur.insert(v.clone(), Interval::new(lo, hi));
        }
        let mut hull: Vec<Option<Interval>> = vec![None; spec.signals.len()];
        for op in &spec.operators {
            let mut fresh = Vec::new();
            for (to, e) in &op.transfers {
                let iv = e.eval_interval(&cur).ok()?;
                if !iv.is_bounded() {
                    return None;
                }
                fresh.push((to.clone(), iv));
            }
            for (to, iv) in fresh {
                let s = self.circuit.signal_index(&to).ok()?;
                hull[s] = Some(hull[s].map_or(iv, |h| h.hull(&iv)));
                cur.insert(to, iv);
            }
        }
        Some(hull)
    }

    fn sweep_bounds(&self) -> Result<Vec<Option<Interval>>> {
        let c = &*self.circuit;
        let dims: Vec<usize> = self.sets.iter().map(IndexSet::len).collect();
        let (strides, n_nodes) = strides_of(&dims);
        if n_nodes > SWEEP_LIMIT {
            return Err(Error::Domain(format!(
                "cannot bound signal ranges: interval propagation is unbounded and the \
                 {n_nodes}-node sweep exceeds {SWEEP_LIMIT}"
            )));
        }
        log::info!("interval bounds unusable; sweeping {n_nodes} nodes for signal boxes");
        let ns = c.n_signals();
        let nv = c.n_vars();
        let n_ops = c.ops().len();
        let empty = || vec![None::<Interval>; ns];
        let merge = |mut a: Vec<Option<Interval>>, b: Vec<Option<Interval>>| {
            for (x, y) in a.iter_mut().zip(b) {
                if let Some(y) = y {
                    *x = Some(x.map_or(y, |h| h.hull(&y)));
                }
            }
            a
        };
        (0..n_nodes)
            .into_par_iter()
            .map(|node| -> Result<Vec<Option<Interval>>> {
                let mut state = c.initial_state();
                for v in 0..nv {
                    state[v] = self.sets[v].node((node / strides[v]) % dims[v]);
                }
                let mut acc = empty();
                for i in 0..n_ops {
                    c.run_ops(i..i + 1, &mut state)?;
                    for (s, _) in &c.ops()[i].transfers {
                        let v = state[nv + s];
                        if !v.is_finite() {
                            return Err(Error::Domain(format!(
                                "signal `{}` is not finite ({v})",
                                self.spec.signals[*s].name
                            )));
                        }
                        acc[*s] = Some(acc[*s].map_or(Interval::point(v), |h| {
                            h.hull(&Interval::point(v))
                        }));
                    }
                }
                Ok(acc)
            })
            .try_reduce(empty, |a, b| Ok(merge(a, b)))
    }
}

fn check_discrete(name: &str, value: f64, lo: i64, hi: i64) -> Result<()> {
    if value.fract() != 0.0 || !(value >= lo as f64 && value <= hi as f64) {
        return Err(Error::Range {
            signal: name.to_string(),
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

/// Kernel values `δ_w(node − g)` on the nodes within the kernel's support.
fn kernel_row(kernel: &DeltaKernel, axis: &GridAxis, g: f64) -> (usize, Vec<f64>) {
    let n = axis.n_points();
    let (i0, i1) = match kernel.support_radius() {
        Some(r) => {
            let h = axis.cell_width();
            let a = ((g - r - axis.lo()) / h).floor().max(0.0) as usize;
            let b = (((g + r - axis.lo()) / h).ceil() as usize).min(n - 1);
            (a.min(n - 1), b)
        }
        None => (0, n - 1),
    };
    let nodes = axis.nodes();
    (i0, (i0..=i1).map(|i| kernel.eval(nodes[i] - g)).collect())
}

pub(crate) fn strides_of(dims: &[usize]) -> (Vec<usize>, usize) {
    let mut strides = vec![1; dims.len()];
    let mut size = 1usize;
    for i in (0..dims.len()).rev() {
        strides[i] = size;
        size = size.saturating_mul(dims[i]);
    }
    (strides, size)
}

/// `sqrt(det(G))` for the Gram matrix of `jac` (rows = outputs).
fn gram_sqrt_det(jac: &[Vec<f64>]) -> f64 {
    let m = jac.len();
    let n = jac[0].len();
    let gram: Vec<Vec<f64>> = if m <= n {
        (0..m)
            .map(|i| (0..m).map(|j| (0..n).map(|k| jac[i][k] * jac[j][k]).sum()).collect())
            .collect()
    } else {
        (0..n)
            .map(|i| (0..n).map(|j| (0..m).map(|k| jac[k][i] * jac[k][j]).sum()).collect())
            .collect()
    };
    determinant(gram).max(0.0).sqrt()
}

fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty pivot range");
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
        }
    }
    det
}

fn domains_of(spec: &CircuitSpec) -> Vec<SignalDomain> {
    spec.signals.iter().map(|s| s.domain.clone()).collect()
}

fn sets_from_axes(spec: &CircuitSpec, axes: &[GridAxis]) -> Result<Vec<Option<IndexSet>>> {
    let mut sets = vec![None; spec.variables.len()];
    for a in axes {
        let v = spec
            .variables
            .iter()
            .position(|v| v == a.label())
            .ok_or_else(|| Error::UnknownVariable(a.label().to_string()))?;
        sets[v] = Some(IndexSet::Continuous(a.clone()));
    }
    Ok(sets)
}

fn require_all(spec: &CircuitSpec, sets: Vec<Option<IndexSet>>) -> Result<Vec<IndexSet>> {
    sets.into_iter()
        .zip(&spec.variables)
        .map(|(s, v)| s.ok_or_else(|| Error::Domain(format!("no index set for variable `{v}`"))))
        .collect()
}

/// Continuous tensorization: one axis per variable (matched by label).
pub fn tensorize(
    spec: &CircuitSpec,
    axes: &[GridAxis],
    kernel: DeltaKernel,
    mode: TensorMode,
) -> Result<FieldTensor> {
    let sets = require_all(spec, sets_from_axes(spec, axes)?)?;
    FieldTensor::build(spec, sets, domains_of(spec), kernel, mode, DEFAULT_MEMORY_BUDGET)
}

/// Discrete tensorization with Kronecker deltas: every variable and every
/// signal gets an integer range (signals may keep a range declared in the
/// spec).
pub fn tensorize_discrete(spec: &CircuitSpec, ranges: &[(&str, i64, i64)]) -> Result<FieldTensor> {
    let mut sets = vec![None; spec.variables.len()];
    let mut domains = domains_of(spec);
    apply_ranges(spec, ranges, &mut sets, &mut domains)?;
    if let Some(i) = domains.iter().position(|d| *d == SignalDomain::Continuous) {
        return Err(Error::Mode(format!(
            "signal `{}` has no integer range",
            spec.signals[i].name
        )));
    }
    let sets = require_all(spec, sets)?;
    // the kernel is never evaluated on discrete indexes
    let kernel = DeltaKernel::gaussian(1.0)?;
    FieldTensor::build(spec, sets, domains, kernel, TensorMode::Grid, DEFAULT_MEMORY_BUDGET)
}

/// Mixed tensorization: labels in `ranges` are summed over integers, labels
/// in `axes` are integrated on their grids.
pub fn tensorize_hybrid(
    spec: &CircuitSpec,
    axes: &[GridAxis],
    ranges: &[(&str, i64, i64)],
    kernel: DeltaKernel,
) -> Result<FieldTensor> {
    tensorize_mixed(spec, axes, ranges, kernel, TensorMode::Grid, DEFAULT_MEMORY_BUDGET)
}

/// [`tensorize_hybrid`] with an explicit mode and memory budget.
pub fn tensorize_mixed(
    spec: &CircuitSpec,
    axes: &[GridAxis],
    ranges: &[(&str, i64, i64)],
    kernel: DeltaKernel,
    mode: TensorMode,
    budget: usize,
) -> Result<FieldTensor> {
    let mut sets = sets_from_axes(spec, axes)?;
    let mut domains = domains_of(spec);
    apply_ranges(spec, ranges, &mut sets, &mut domains)?;
    let sets = require_all(spec, sets)?;
    FieldTensor::build(spec, sets, domains, kernel, mode, budget)
}

fn apply_ranges(
    spec: &CircuitSpec,
    ranges: &[(&str, i64, i64)],
    sets: &mut [Option<IndexSet>],
    domains: &mut [SignalDomain],
) -> Result<()> {
    for &(label, lo, hi) in ranges {
        if let Some(v) = spec.variables.iter().position(|v| v == label) {
            if sets[v].is_some() {
                return Err(Error::Domain(format!("`{label}` given both an axis and a range")));
            }
            sets[v] = Some(IndexSet::discrete(lo, hi)?);
        } else if let Some(s) = spec.signals.iter().position(|s| s.name == label) {
            if lo > hi {
                return Err(Error::Domain(format!("empty integer range {lo}..={hi}")));
            }
            domains[s] = SignalDomain::Discrete { lo, hi };
        } else {
            return Err(Error::UnknownVariable(label.to_string()));
        }
    }
    Ok(())
}
