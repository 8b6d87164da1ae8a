//! Logical circuits: operators `h(x)·δ(α − g(x))` wired as a chain, and their
//! tensorization into field tensors.
//!
//! An operator reads at most one free variable plus any signals, writes new
//! signal values (its transfer `g`) and scales the circuit amplitude by
//! `factor · exp(-τ·cost)`, optionally gated to zero by a constraint. Operators
//! that read the same variable must be adjacent; each such run is a *site* of
//! the chain.

mod library;
mod tensor;

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

pub use library::{
    constrained_quadratic_chain, cos_sin_chain, inversion_chain, quadratic_chain,
    sum_of_powers,
};
pub use tensor::{
    tensorize, tensorize_discrete, tensorize_hybrid, tensorize_mixed, BondGauge, FieldTensor, SignalAxis,
    TensorMode, DEFAULT_MEMORY_BUDGET,
};
pub(crate) use tensor::{BondLayout, GaugeInsertion, GridNetwork, GridSite, NodeTable};

use crate::error::{Error, Result};
use crate::expr::{parse, Binding, CompiledExpr, Expr};
use crate::kernels::StepKernel;

#[derive(Debug, Clone, PartialEq)]
pub enum SignalDomain {
    Continuous,
    Discrete { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub name: String,
    /// Value before any operator writes the signal.
    pub init: Option<f64>,
    pub domain: SignalDomain,
}

impl Signal {
    pub fn continuous(name: impl Into<String>, init: Option<f64>) -> Self {
        Self {
            name: name.into(),
            init,
            domain: SignalDomain::Continuous,
        }
    }

    pub fn discrete(name: impl Into<String>, init: Option<f64>, lo: i64, hi: i64) -> Self {
        Self {
            name: name.into(),
            init,
            domain: SignalDomain::Discrete { lo, hi },
        }
    }
}

/// Constraint predicate `expr < bound` (strict) or `expr <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub expr: Expr,
    pub bound: f64,
    pub strict: bool,
}

impl Gate {
    /// Strict gates are the complement of a hard step at the bound, so a
    /// value exactly at the bound is rejected.
    pub fn passes(&self, value: f64) -> bool {
        let h = StepKernel::hard();
        let v = if self.strict {
            1.0 - h.eval(value - self.bound)
        } else {
            h.eval(self.bound - value)
        };
        v == 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Transform,
    Amplitude,
    ConstraintGate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalOperator {
    pub name: String,
    pub reads: Option<String>,
    pub transfers: Vec<(String, Expr)>,
    pub cost: Option<Expr>,
    pub factor: Option<Expr>,
    pub gate: Option<Gate>,
}

impl LogicalOperator {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            reads: None,
            transfers: Vec::new(),
            cost: None,
            factor: None,
            gate: None,
        }
    }

    pub fn reads(mut self, var: impl Into<String>) -> Self {
        self.reads = Some(var.into());
        self
    }

    pub fn transfer(mut self, to: impl Into<String>, src: &str) -> Result<Self> {
        self.transfers.push((to.into(), parse(src)?));
        Ok(self)
    }

    pub fn cost(mut self, src: &str) -> Result<Self> {
        self.cost = Some(parse(src)?);
        Ok(self)
    }

    pub fn factor(mut self, src: &str) -> Result<Self> {
        self.factor = Some(parse(src)?);
        Ok(self)
    }

    pub fn gate(mut self, src: &str, bound: f64, strict: bool) -> Result<Self> {
        self.gate = Some(Gate {
            expr: parse(src)?,
            bound,
            strict,
        });
        Ok(self)
    }

    pub fn kind(&self) -> OperatorKind {
        if self.gate.is_some() {
            OperatorKind::ConstraintGate
        } else if self.cost.is_some() || self.factor.is_some() {
            OperatorKind::Amplitude
        } else {
            OperatorKind::Transform
        }
    }

    fn exprs(&self) -> impl Iterator<Item = &Expr> {
        self.transfers
            .iter()
            .map(|(_, e)| e)
            .chain(self.cost.iter())
            .chain(self.factor.iter())
            .chain(self.gate.iter().map(|g| &g.expr))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    pub variables: Vec<String>,
    pub signals: Vec<Signal>,
    pub operators: Vec<LogicalOperator>,
    pub outputs: Vec<String>,
    pub constants: BTreeMap<String, f64>,
    /// Imaginary-time constant used when a query does not override it.
    pub tau: f64,
}

impl CircuitSpec {
    pub fn new(variables: &[&str]) -> Self {
        Self {
            variables: variables.iter().map(|s| s.to_string()).collect(),
            signals: Vec::new(),
            operators: Vec::new(),
            outputs: Vec::new(),
            constants: BTreeMap::new(),
            tau: 1.0,
        }
    }

    pub fn signal(mut self, s: Signal) -> Self {
        self.signals.push(s);
        self
    }

    pub fn op(mut self, op: LogicalOperator) -> Self {
        self.operators.push(op);
        self
    }

    pub fn output(mut self, name: impl Into<String>) -> Self {
        self.outputs.push(name.into());
        self
    }

    pub fn constant(mut self, name: impl Into<String>, value: f64) -> Self {
        self.constants.insert(name.into(), value);
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn has_cost(&self) -> bool {
        self.operators.iter().any(|o| o.cost.is_some())
    }

    pub fn has_gates(&self) -> bool {
        self.operators.iter().any(|o| o.gate.is_some())
    }

    pub fn compile(&self) -> Result<CompiledCircuit> {
        CompiledCircuit::new(self.clone())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledOp {
    pub transfers: Vec<(usize, CompiledExpr)>,
    pub cost: Option<CompiledExpr>,
    pub factor: Option<CompiledExpr>,
    pub gate: Option<(CompiledExpr, Gate)>,
}

/// A run of adjacent operators sharing one free variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub var: usize,
    pub ops: Range<usize>,
}

/// Amplitude pieces of one circuit evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitude {
    pub cost: f64,
    pub factor: f64,
    pub pass: bool,
}

impl Amplitude {
    pub const ONE: Amplitude = Amplitude {
        cost: 0.0,
        factor: 1.0,
        pass: true,
    };

    pub fn value(&self, tau: f64) -> f64 {
        if self.pass {
            self.factor * (-tau * self.cost).exp()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outputs: Vec<f64>,
    pub amplitude: Amplitude,
}

/// A validated circuit with names resolved to state slots. Slots
/// `0..n_vars` hold variables, the rest hold signals.
#[derive(Debug, Clone)]
pub struct CompiledCircuit {
    spec: CircuitSpec,
    ops: Vec<CompiledOp>,
    sites: Vec<Site>,
    outputs: Vec<usize>,
    /// `live[k]`: signals carried on the bond in front of site `k`
    /// (`k == sites.len()` is the bond into the output boundary).
    live: Vec<Vec<usize>>,
    /// Signals written by each site.
    written: Vec<Vec<usize>>,
}

impl CompiledCircuit {
    fn new(spec: CircuitSpec) -> Result<Self> {
        let nv = spec.variables.len();
        if nv == 0 {
            return Err(Error::Topology("circuit has no free variables".into()));
        }
        let mut seen = HashSet::new();
        for name in spec
            .variables
            .iter()
            .chain(spec.signals.iter().map(|s| &s.name))
            .chain(spec.constants.keys())
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::Topology(format!("name `{name}` declared twice")));
            }
        }
        if !(spec.tau > 0.0 && spec.tau.is_finite()) && spec.has_cost() {
            return Err(Error::Domain(format!("tau must be positive, got {}", spec.tau)));
        }
        for s in &spec.signals {
            if let SignalDomain::Discrete { lo, hi } = s.domain {
                if lo > hi {
                    return Err(Error::Domain(format!(
                        "signal `{}`: empty range {lo}..={hi}",
                        s.name
                    )));
                }
            }
        }
        let var_index = |n: &str| spec.variables.iter().position(|v| v == n);
        let sig_index = |n: &str| spec.signals.iter().position(|s| s.name == n);

        let mut ops = Vec::with_capacity(spec.operators.len());
        let mut op_var = Vec::with_capacity(spec.operators.len());
        for op in &spec.operators {
            let read = match &op.reads {
                Some(v) => Some(var_index(v).ok_or_else(|| Error::UnknownVariable(v.clone()))?),
                None => None,
            };
            op_var.push(read);
            for e in op.exprs() {
                for name in e.variables() {
                    if let Some(vi) = var_index(&name) {
                        if read != Some(vi) {
                            return Err(Error::Topology(format!(
                                "operator `{}` uses variable `{name}` but reads {}; \
                                 each operator reads at most one free variable",
                                op.name,
                                op.reads.as_deref().unwrap_or("none")
                            )));
                        }
                    } else if sig_index(&name).is_none() && !spec.constants.contains_key(&name)
                    {
                        return Err(Error::UnknownVariable(name));
                    }
                }
            }
            let resolve = |n: &str| {
                if let Some(i) = var_index(n) {
                    Some(Binding::Slot(i))
                } else if let Some(i) = sig_index(n) {
                    Some(Binding::Slot(nv + i))
                } else {
                    spec.constants.get(n).map(|&v| Binding::Value(v))
                }
            };
            let mut transfers = Vec::new();
            for (to, e) in &op.transfers {
                let si = sig_index(to).ok_or_else(|| Error::UnknownVariable(to.clone()))?;
                if transfers.iter().any(|(t, _)| *t == si) {
                    return Err(Error::Topology(format!(
                        "operator `{}` writes `{to}` twice",
                        op.name
                    )));
                }
                transfers.push((si, e.compile(&resolve)?));
            }
            ops.push(CompiledOp {
                transfers,
                cost: op.cost.as_ref().map(|e| e.compile(&resolve)).transpose()?,
                factor: op.factor.as_ref().map(|e| e.compile(&resolve)).transpose()?,
                gate: match &op.gate {
                    Some(g) => Some((g.expr.compile(&resolve)?, g.clone())),
                    None => None,
                },
            });
        }

        let sites = build_sites(&spec, &op_var)?;
        let outputs = spec
            .outputs
            .iter()
            .map(|o| sig_index(o).ok_or_else(|| Error::UnknownVariable(o.clone())))
            .collect::<Result<Vec<_>>>()?;
        if outputs.is_empty() && !spec.has_cost() && !spec.has_gates() {
            let any_factor = spec.operators.iter().any(|o| o.factor.is_some());
            if !any_factor {
                return Err(Error::Topology(
                    "circuit has neither outputs nor amplitude terms".into(),
                ));
            }
        }

        let mut c = Self {
            spec,
            ops,
            sites,
            outputs,
            live: Vec::new(),
            written: Vec::new(),
        };
        c.check_dataflow()?;
        c.analyze_bonds();
        Ok(c)
    }

    /// Every signal must be initialized or written before it is read.
    fn check_dataflow(&self) -> Result<()> {
        let nv = self.n_vars();
        let mut defined: Vec<bool> = self.spec.signals.iter().map(|s| s.init.is_some()).collect();
        for (op, spec_op) in self.ops.iter().zip(&self.spec.operators) {
            for e in op_exprs(op) {
                for slot in e.slots() {
                    if slot >= nv && !defined[slot - nv] {
                        return Err(Error::Topology(format!(
                            "operator `{}` reads signal `{}` before it is written",
                            spec_op.name,
                            self.spec.signals[slot - nv].name
                        )));
                    }
                }
            }
            for (s, _) in &op.transfers {
                defined[*s] = true;
            }
        }
        for &o in &self.outputs {
            if !defined[o] {
                return Err(Error::Topology(format!(
                    "output `{}` is never written",
                    self.spec.signals[o].name
                )));
            }
        }
        Ok(())
    }

    fn analyze_bonds(&mut self) {
        let ns = self.spec.signals.len();
        let nv = self.n_vars();
        let n_sites = self.sites.len();
        let mut written = vec![Vec::new(); n_sites];
        for (k, site) in self.sites.iter().enumerate() {
            for op in &self.ops[site.ops.clone()] {
                for (s, _) in &op.transfers {
                    if !written[k].contains(s) {
                        written[k].push(*s);
                    }
                }
            }
            written[k].sort_unstable();
        }
        let mut live = vec![Vec::new(); n_sites + 1];
        for (k, slot) in live.iter_mut().enumerate() {
            for s in 0..ns {
                let written_before = written[..k].iter().any(|w| w.contains(&s));
                if !written_before {
                    continue;
                }
                // first access from site k on decides liveness
                let mut verdict = None;
                'scan: for site in &self.sites[k..] {
                    for op in &self.ops[site.ops.clone()] {
                        if op_exprs(op).any(|e| e.slots().contains(&(nv + s))) {
                            verdict = Some(true);
                            break 'scan;
                        }
                        if op.transfers.iter().any(|(t, _)| *t == s) {
                            verdict = Some(false);
                            break 'scan;
                        }
                    }
                }
                if verdict.unwrap_or_else(|| self.outputs.contains(&s)) {
                    slot.push(s);
                }
            }
        }
        self.live = live;
        self.written = written;
    }

    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn n_vars(&self) -> usize {
        self.spec.variables.len()
    }

    pub fn n_signals(&self) -> usize {
        self.spec.signals.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    pub fn live(&self, bond: usize) -> &[usize] {
        &self.live[bond]
    }

    pub fn written(&self, site: usize) -> &[usize] {
        &self.written[site]
    }

    pub(crate) fn ops(&self) -> &[CompiledOp] {
        &self.ops
    }

    pub fn var_index(&self, name: &str) -> Result<usize> {
        self.spec
            .variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn signal_index(&self, name: &str) -> Result<usize> {
        self.spec
            .signals
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Fresh state vector: variables zero, signals at their initial values.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut st = vec![0.0; self.n_vars()];
        st.extend(self.spec.signals.iter().map(|s| s.init.unwrap_or(f64::NAN)));
        st
    }

    /// Runs the operators of `range` on `state`, returning their amplitude.
    pub(crate) fn run_ops(&self, range: Range<usize>, state: &mut [f64]) -> Result<Amplitude> {
        let nv = self.n_vars();
        let mut amp = Amplitude::ONE;
        let mut fresh = Vec::new();
        for op in &self.ops[range] {
            if let Some(c) = &op.cost {
                amp.cost += c.eval(state)?;
            }
            if let Some(f) = &op.factor {
                amp.factor *= f.eval(state)?;
            }
            if let Some((e, g)) = &op.gate {
                if !g.passes(e.eval(state)?) {
                    amp.pass = false;
                }
            }
            fresh.clear();
            for (s, e) in &op.transfers {
                fresh.push((*s, e.eval(state)?));
            }
            for &(s, v) in &fresh {
                state[nv + s] = v;
            }
        }
        Ok(amp)
    }

    /// Direct nested evaluation of the whole chain at the variable values `x`
    /// (in declaration order).
    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let mut state = self.initial_state();
        state[..x.len()].copy_from_slice(x);
        let amplitude = self.run_ops(0..self.ops.len(), &mut state)?;
        let nv = self.n_vars();
        Ok(Evaluation {
            outputs: self.outputs.iter().map(|&o| state[nv + o]).collect(),
            amplitude,
        })
    }

    /// Sum of operator cost terms at `x`, i.e. `f(x)` for optimization circuits.
    pub fn cost_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x)?.amplitude.cost)
    }
}

fn op_exprs(op: &CompiledOp) -> impl Iterator<Item = &CompiledExpr> {
    op.transfers
        .iter()
        .map(|(_, e)| e)
        .chain(op.cost.iter())
        .chain(op.factor.iter())
        .chain(op.gate.iter().map(|(e, _)| e))
}

fn build_sites(spec: &CircuitSpec, op_var: &[Option<usize>]) -> Result<Vec<Site>> {
    let mut sites: Vec<Site> = Vec::new();
    for (i, v) in op_var.iter().enumerate() {
        let Some(v) = *v else { continue };
        match sites.last_mut() {
            Some(last) if last.var == v => last.ops.end = i + 1,
            _ => {
                if sites.iter().any(|s| s.var == v) {
                    return Err(Error::Topology(format!(
                        "operators reading `{}` are not adjacent; the chain must visit \
                         each variable once",
                        spec.variables[v]
                    )));
                }
                if let Some(last) = sites.last_mut() {
                    last.ops.end = i;
                }
                // operators before the first variable read join the first site
                let start = if sites.is_empty() { 0 } else { i };
                sites.push(Site { var: v, ops: start..i + 1 });
            }
        }
    }
    let Some(last) = sites.last_mut() else {
        return Err(Error::Topology("no operator reads a free variable".into()));
    };
    last.ops.end = op_var.len();
    for (vi, name) in spec.variables.iter().enumerate() {
        if !sites.iter().any(|s| s.var == vi) {
            return Err(Error::Topology(format!("variable `{name}` is never read")));
        }
    }
    Ok(sites)
}
