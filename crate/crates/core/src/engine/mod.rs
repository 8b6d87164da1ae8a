//! Contraction of field tensors into marginals `F_j`, the FTNILO number and
//! raw / partial moments.
//!
//! Grid-mode tensors are contracted left to right along the chain with one
//! frontier table per bond; composed-mode tensors are summed node by node.
//! Both paths reduce in a fixed order, so results do not depend on the thread
//! count.

mod composed;
mod grid;

use serde::{Deserialize, Serialize};

use crate::circuit::{FieldTensor, SignalDomain, TensorMode};
use crate::error::{Error, Result};
use crate::fmt::format_g;
use crate::grid::IndexSet;
use crate::kernels::DeltaKernel;
use crate::sum::pairwise_sum_by;

/// Closure attached to one circuit output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// `Δ(y, Y)`: kernel delta on continuous outputs, Kronecker on discrete ones.
    Project(f64),
    /// One-constant closure `+(y) = 1`.
    One,
    /// `y` itself, for the forward transform `∫ y Φ dy`.
    Linear,
}

/// How the restricted density weights its solution set.
///
/// `Raw` is the literal `δ_w(f(x) − Y)`, whose integral near a simple root
/// is `1/|f'(X)|`. `Counting` multiplies by the Jacobian volume factor so
/// every isolated root contributes unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    #[default]
    Counting,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub boundaries: Vec<Boundary>,
    pub measure: Measure,
    /// Overrides the circuit's τ.
    pub tau: Option<f64>,
    /// Per-variable factors multiplied into the integrand (masks, projections
    /// of previously fixed variables). `None` means 1.
    pub multipliers: Vec<Option<Vec<f64>>>,
}

impl Query {
    /// Outputs projected onto `y`, counting measure.
    pub fn project(t: &FieldTensor, y: &[f64]) -> Result<Self> {
        let n_out = t.circuit().outputs().len();
        if y.len() != n_out {
            return Err(Error::Mode(format!(
                "{} target values for {n_out} outputs",
                y.len()
            )));
        }
        Ok(Self {
            boundaries: y.iter().map(|&v| Boundary::Project(v)).collect(),
            measure: Measure::Counting,
            tau: None,
            multipliers: vec![None; t.variables().len()],
        })
    }

    /// Every output closed with the One-constant function.
    pub fn closed(t: &FieldTensor) -> Self {
        Self {
            boundaries: vec![Boundary::One; t.circuit().outputs().len()],
            measure: Measure::Raw,
            tau: None,
            multipliers: vec![None; t.variables().len()],
        }
    }

    pub fn with_measure(mut self, m: Measure) -> Self {
        self.measure = m;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    /// Multiplies `factor(x)` into variable `var`'s integrand.
    pub fn multiply(
        mut self,
        t: &FieldTensor,
        var: &str,
        factor: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let v = t.circuit().var_index(var)?;
        let set = &t.index_sets()[v];
        let m = self.multipliers[v].get_or_insert_with(|| vec![1.0; set.len()]);
        for (i, slot) in m.iter_mut().enumerate() {
            *slot *= factor(set.node(i));
        }
        Ok(self)
    }

    /// Restricts `var` to `lo <= x < hi` (or `<= hi` when `include_hi`).
    pub fn window(self, t: &FieldTensor, var: &str, lo: f64, hi: f64, include_hi: bool) -> Result<Self> {
        self.multiply(t, var, |x| {
            let inside = x >= lo && if include_hi { x <= hi } else { x < hi };
            inside as u8 as f64
        })
    }

    /// Projects `var` onto `value` with a kernel delta.
    pub fn pin(self, t: &FieldTensor, var: &str, value: f64, kernel: &DeltaKernel) -> Result<Self> {
        self.multiply(t, var, |x| kernel.eval(x - value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtniloNumber {
    pub raw: f64,
    pub rounded: i64,
    /// `|raw − rounded| < 0.25`.
    pub confident: bool,
}

impl FtniloNumber {
    pub fn new(raw: f64) -> Self {
        let rounded = raw.round();
        Self {
            raw,
            rounded: rounded as i64,
            confident: (raw - rounded).abs() < 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `H(x − r)`: nodes with `x >= r`.
    Plus,
    /// `1 − H(x − r)`: nodes with `x < r`.
    Minus,
}

/// One marginal `F_j` tabulated on its variable's nodes. Stored densities are
/// scaled by `exp(-log_scale)` to stay representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub variable: String,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub density: Vec<f64>,
    pub log_scale: f64,
}

impl Marginal {
    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Density values in absolute units.
    pub fn values(&self) -> Vec<f64> {
        let s = self.scale();
        self.density.iter().map(|d| d * s).collect()
    }

    fn scaled_moment_where(&self, q: u32, keep: impl Fn(f64) -> bool) -> f64 {
        pairwise_sum_by(self.nodes.len(), |i| {
            let x = self.nodes[i];
            if keep(x) {
                self.weights[i] * x.powi(q as i32) * self.density[i]
            } else {
                0.0
            }
        })
    }

    /// `μ_q = ∫ x^q F(x) dx`.
    pub fn moment(&self, q: u32) -> f64 {
        self.scaled_moment_where(q, |_| true) * self.scale()
    }

    /// Heaviside-restricted moment `μ_q^±(r)`.
    pub fn partial(&self, q: u32, r: f64, side: Side) -> f64 {
        let m = match side {
            Side::Plus => self.scaled_moment_where(q, |x| x >= r),
            Side::Minus => self.scaled_moment_where(q, |x| x < r),
        };
        m * self.scale()
    }

    /// Moment over nodes in `[lo, hi)` (or `[lo, hi]`).
    pub fn window_moment(&self, q: u32, lo: f64, hi: f64, include_hi: bool) -> f64 {
        let m = self.scaled_moment_where(q, |x| x >= lo && if include_hi { x <= hi } else { x < hi });
        m * self.scale()
    }

    /// Normalized first moment `μ₁/μ₀`; `None` for an empty marginal.
    pub fn mean(&self) -> Option<f64> {
        let m0 = self.scaled_moment_where(0, |_| true);
        (m0 > 0.0).then(|| self.scaled_moment_where(1, |_| true) / m0)
    }

    /// Standard deviation of the normalized marginal.
    pub fn spread(&self) -> Option<f64> {
        let m0 = self.scaled_moment_where(0, |_| true);
        if !(m0 > 0.0) {
            return None;
        }
        let mean = self.scaled_moment_where(1, |_| true) / m0;
        let var = self.scaled_moment_where(2, |_| true) / m0 - mean * mean;
        Some(var.max(0.0).sqrt())
    }

    /// Node of the largest density; the lowest coordinate wins ties.
    pub fn argmax(&self) -> Option<f64> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in self.density.iter().enumerate() {
            if best.map_or(true, |(_, b)| d > b) {
                best = Some((i, d));
            }
        }
        best.filter(|(_, d)| *d > 0.0).map(|(i, _)| self.nodes[i])
    }

    /// Two-column CSV: header, LF endings, `%.12g` numbers.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},density\n", self.variable);
        for (x, d) in self.nodes.iter().zip(self.values()) {
            out.push_str(&format_g(*x, 12));
            out.push(',');
            out.push_str(&format_g(d, 12));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionResult {
    pub marginals: Vec<Marginal>,
    /// Scaled total mass; multiply by `exp(log_scale)` for 𝒩.
    pub scaled_total: f64,
    pub log_scale: f64,
    pub mode: TensorMode,
    pub truncation_loss: f64,
    /// Largest relative imaginary part left by a complex gauge pair.
    pub gauge_imag_residual: f64,
}

impl ContractionResult {
    pub fn total(&self) -> f64 {
        self.scaled_total * self.log_scale.exp()
    }

    pub fn ftnilo(&self) -> FtniloNumber {
        FtniloNumber::new(self.total())
    }

    pub fn marginal(&self, var: &str) -> Result<&Marginal> {
        self.marginals
            .iter()
            .find(|m| m.variable == var)
            .ok_or_else(|| Error::UnknownVariable(var.to_string()))
    }
}

pub(crate) fn boundary_factor(b: Boundary, domain: &SignalDomain, kernel: &DeltaKernel, y: f64) -> f64 {
    match b {
        Boundary::One => 1.0,
        Boundary::Linear => y,
        Boundary::Project(target) => match domain {
            SignalDomain::Continuous => kernel.eval(y - target),
            SignalDomain::Discrete { .. } => (y == target) as u8 as f64,
        },
    }
}

/// Which outputs enter the counting-measure Jacobian.
pub(crate) fn projected_outputs(t: &FieldTensor, q: &Query) -> Vec<bool> {
    let c = t.circuit();
    c.outputs()
        .iter()
        .zip(&q.boundaries)
        .map(|(&o, b)| {
            matches!(b, Boundary::Project(_))
                && t.signal_domains()[o] == SignalDomain::Continuous
        })
        .collect()
}

fn validate(t: &FieldTensor, q: &Query) -> Result<()> {
    let n_out = t.circuit().outputs().len();
    if q.boundaries.len() != n_out {
        return Err(Error::Mode(format!(
            "query closes {} outputs but the tensor has {n_out}",
            q.boundaries.len()
        )));
    }
    if q.multipliers.len() != t.variables().len() {
        return Err(Error::Mode("multiplier list does not match the variables".into()));
    }
    for (m, set) in q.multipliers.iter().zip(t.index_sets()) {
        if let Some(m) = m {
            if m.len() != set.len() {
                return Err(Error::Mode("multiplier length does not match its index set".into()));
            }
        }
    }
    if let Some(tau) = q.tau {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("tau must be positive, got {tau}")));
        }
    }
    Ok(())
}

/// Contracts the tensor under `q`, producing every variable's marginal.
pub fn contract(t: &FieldTensor, q: &Query) -> Result<ContractionResult> {
    validate(t, q)?;
    let mut r = match t.mode() {
        TensorMode::Grid => grid::contract(t, q)?,
        TensorMode::Composed => composed::contract(t, q)?,
    };
    // bring all marginals onto one scale
    let common = r
        .marginals
        .iter()
        .map(|m| m.log_scale)
        .fold(f64::NEG_INFINITY, f64::max);
    if common.is_finite() {
        for m in &mut r.marginals {
            let f = (m.log_scale - common).exp();
            if f != 1.0 {
                m.density.iter_mut().for_each(|d| *d *= f);
            }
            m.log_scale = common;
        }
    } else {
        for m in &mut r.marginals {
            m.log_scale = 0.0;
        }
    }
    let first = &r.marginals[0];
    r.scaled_total = pairwise_sum_by(first.nodes.len(), |i| first.weights[i] * first.density[i]);
    r.log_scale = first.log_scale;
    if !r.scaled_total.is_finite() || r.marginals.iter().any(|m| m.density.iter().any(|d| !d.is_finite())) {
        return Err(Error::DivergentAmplitude(
            "contraction produced a non-finite value".into(),
        ));
    }
    Ok(r)
}

/// `F_j` for one variable: every other variable closed with the One
/// function, outputs closed as the query says.
pub fn contract_marginal(t: &FieldTensor, target: &str, q: &Query) -> Result<Marginal> {
    t.circuit().var_index(target)?;
    let r = contract(t, q)?;
    Ok(r.marginal(target)?.clone())
}

pub fn ftnilo_number(t: &FieldTensor, q: &Query) -> Result<FtniloNumber> {
    Ok(contract(t, q)?.ftnilo())
}

fn check_order(order: u32) -> Result<()> {
    if order > 4 {
        return Err(Error::Domain(format!("moment order {order} exceeds 4")));
    }
    Ok(())
}

pub fn raw_moment(t: &FieldTensor, q: &Query, target: &str, order: u32) -> Result<f64> {
    check_order(order)?;
    Ok(contract_marginal(t, target, q)?.moment(order))
}

pub fn partial_moment(
    t: &FieldTensor,
    q: &Query,
    target: &str,
    order: u32,
    r: f64,
    side: Side,
) -> Result<f64> {
    check_order(order)?;
    let (lo, hi) = t.index_set(target)?.bounds();
    if !(r >= lo && r <= hi) {
        return Err(Error::Domain(format!("split point {r} outside [{lo}, {hi}]")));
    }
    Ok(contract_marginal(t, target, q)?.partial(order, r, side))
}

pub(crate) fn variable_weights(set: &IndexSet, mult: &Option<Vec<f64>>) -> Vec<f64> {
    let mut w = set.weights();
    if let Some(m) = mult {
        w.iter_mut().zip(m).for_each(|(w, m)| *w *= m);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{inversion_chain, tensorize};
    use crate::grid::{GridAxis, QuadratureRule};

    fn square(mode: TensorMode) -> FieldTensor {
        let spec = inversion_chain(&["x"], &["x^2"]).unwrap();
        let axis = GridAxis::new("x", -5.0, 5.0, 501, QuadratureRule::Trapezoid).unwrap();
        let k = DeltaKernel::default_for_cell(axis.cell_width()).unwrap();
        tensorize(&spec, &[axis], k, mode).unwrap()
    }

    #[test]
    fn square_root_count_both_modes() {
        for mode in [TensorMode::Grid, TensorMode::Composed] {
            let t = square(mode);
            let n = ftnilo_number(&t, &Query::project(&t, &[4.0]).unwrap()).unwrap();
            assert!((n.raw - 2.0).abs() <= 0.1, "{mode:?}: {n:?}");
            assert!(n.confident && n.rounded == 2);
            let n = ftnilo_number(&t, &Query::project(&t, &[-1.0]).unwrap()).unwrap();
            assert!(n.raw <= 0.1, "{mode:?}: {n:?}");
        }
    }

    #[test]
    fn square_moments() {
        for mode in [TensorMode::Grid, TensorMode::Composed] {
            let t = square(mode);
            let q = Query::project(&t, &[4.0]).unwrap();
            let m = contract_marginal(&t, "x", &q).unwrap();
            assert!((m.moment(0) - 2.0).abs() < 0.1);
            assert!(m.moment(1).abs() < 0.05);
            assert!((m.moment(2) - 8.0).abs() < 0.4);
            assert!((m.partial(0, 0.0, Side::Plus) - 1.0).abs() < 0.05);
            assert!((m.partial(0, 0.0, Side::Minus) - 1.0).abs() < 0.05);
            assert!(m.partial(0, 3.0, Side::Plus) < 0.05);
        }
    }

    #[test]
    fn moment_order_and_split_checks() {
        let t = square(TensorMode::Composed);
        let q = Query::project(&t, &[4.0]).unwrap();
        assert_eq!(raw_moment(&t, &q, "x", 5).unwrap_err().name(), "DomainError");
        assert_eq!(
            partial_moment(&t, &q, "x", 0, 9.0, Side::Plus).unwrap_err().name(),
            "DomainError"
        );
        assert_eq!(
            contract_marginal(&t, "y", &q).unwrap_err(),
            Error::UnknownVariable("y".into())
        );
        let bad = Query { boundaries: vec![], ..q };
        assert_eq!(contract(&t, &bad).unwrap_err().name(), "ModeError");
    }

    #[test]
    fn csv_shape() {
        let t = square(TensorMode::Composed);
        let m = contract_marginal(&t, "x", &Query::project(&t, &[4.0]).unwrap()).unwrap();
        let csv = m.to_csv();
        assert!(csv.starts_with("x,density\n"));
        assert_eq!(csv.lines().count(), 502);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn ftnilo_number_flags() {
        assert!(FtniloNumber::new(1.9).confident);
        assert!(!FtniloNumber::new(1.3).confident);
        assert_eq!(FtniloNumber::new(2.6).rounded, 3);
    }
}
