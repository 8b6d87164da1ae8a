//! Ready-made circuits for the worked examples.

use super::{CircuitSpec, LogicalOperator, Signal};
use crate::error::{Error, Result};

fn var_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("tau must be positive, got {tau}")))
    }
}

fn base(vars: &[String], tau: f64) -> CircuitSpec {
    let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
    CircuitSpec::new(&refs).with_tau(tau)
}

/// Chain `r ← term_k(x_k, r)` starting from `r = 0`; the terminal `r` is the
/// single output.
pub fn inversion_chain(variables: &[&str], terms: &[&str]) -> Result<CircuitSpec> {
    if variables.len() != terms.len() {
        return Err(Error::Topology(format!(
            "{} variables but {} chain terms",
            variables.len(),
            terms.len()
        )));
    }
    let mut spec = CircuitSpec::new(variables).signal(Signal::continuous("r", Some(0.0)));
    for (k, (v, t)) in variables.iter().zip(terms).enumerate() {
        spec = spec.op(LogicalOperator::new(format!("S{k}")).reads(*v).transfer("r", t)?);
    }
    Ok(spec.output("r"))
}

/// `f(x) = Σ a_k^{x_k}` accumulated as `r_{k+1} = r_k + a_k^{x_k}`.
pub fn sum_of_powers(a: &[f64]) -> Result<CircuitSpec> {
    let vars = var_names(a.len());
    let mut spec = base(&vars, 1.0).signal(Signal::continuous("r", Some(0.0)));
    for (k, &ak) in a.iter().enumerate() {
        spec = spec.constant(format!("a{k}"), ak).op(
            LogicalOperator::new(format!("S{k}"))
                .reads(&vars[k])
                .transfer("r", &format!("r + a{k}^x{k}"))?,
        );
    }
    Ok(spec.output("r"))
}

fn quadratic_ops(diag: &[f64], off: &[f64]) -> Result<Vec<LogicalOperator>> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(Error::Domain(format!(
            "need n diagonal and n-1 off-diagonal coefficients, got {} and {}",
            n,
            off.len()
        )));
    }
    let mut ops = Vec::with_capacity(n);
    for i in 0..n {
        let cost = if i == 0 {
            format!("d{i}*x{i}^2")
        } else {
            format!("d{i}*x{i}^2 + o{}*r*x{i}", i - 1)
        };
        let mut op = LogicalOperator::new(format!("S{i}")).reads(format!("x{i}")).cost(&cost)?;
        if i + 1 < n {
            op = op.transfer("r", &format!("x{i}"))?;
        }
        ops.push(op);
    }
    Ok(ops)
}

fn quadratic_constants(mut spec: CircuitSpec, diag: &[f64], off: &[f64]) -> CircuitSpec {
    for (i, d) in diag.iter().enumerate() {
        spec = spec.constant(format!("d{i}"), *d);
    }
    for (i, o) in off.iter().enumerate() {
        spec = spec.constant(format!("o{i}"), *o);
    }
    spec
}

/// `f(x) = Σ C_ii x_i² + Σ C_{i,i+1} x_i x_{i+1}` as a chain whose operator
/// `i` receives `x_{i-1}` on its signal input.
pub fn quadratic_chain(diag: &[f64], off: &[f64], tau: f64) -> Result<CircuitSpec> {
    check_tau(tau)?;
    let vars = var_names(diag.len());
    let spec = base(&vars, tau).signal(Signal::continuous("r", Some(0.0)));
    let ops = quadratic_ops(diag, off)?;
    let mut spec = quadratic_constants(spec, diag, off);
    for op in ops {
        spec = spec.op(op);
    }
    Ok(spec)
}

/// Quadratic chain plus a second layer of R operators accumulating
/// `c = Σ a_i x_i`; the last R operator zeroes the amplitude unless `c < w`.
pub fn constrained_quadratic_chain(
    diag: &[f64],
    off: &[f64],
    a: &[f64],
    w: f64,
    tau: f64,
) -> Result<CircuitSpec> {
    check_tau(tau)?;
    let n = diag.len();
    if a.len() != n {
        return Err(Error::Domain(format!(
            "constraint has {} coefficients for {n} variables",
            a.len()
        )));
    }
    let vars = var_names(n);
    let spec = base(&vars, tau)
        .signal(Signal::continuous("r", Some(0.0)))
        .signal(Signal::continuous("c", Some(0.0)));
    let ops = quadratic_ops(diag, off)?;
    let mut spec = quadratic_constants(spec, diag, off);
    for (i, op) in ops.into_iter().enumerate() {
        spec = spec.constant(format!("a{i}"), a[i]).op(op);
        let partial = format!("c + a{i}*x{i}");
        let r = LogicalOperator::new(format!("R{i}")).reads(format!("x{i}"));
        let r = if i + 1 < n {
            r.transfer("c", &partial)?
        } else {
            r.gate(&partial, w, true)?
        };
        spec = spec.op(r);
    }
    Ok(spec)
}

/// `f(x) = Σ a_i sin(x_i)` with `a_0 = 1`, `a_i = cos(a_{i-1} sin(x_{i-1}) x_i)`.
/// The signal carries `r_i = a_i sin(x_i)`; starting from `r = 0` makes the
/// first operator's factor `cos(0) = 1`.
pub fn cos_sin_chain(n: usize, tau: f64) -> Result<CircuitSpec> {
    check_tau(tau)?;
    if n == 0 {
        return Err(Error::Domain("cos-sin chain needs n >= 1".into()));
    }
    let vars = var_names(n);
    let mut spec = base(&vars, tau).signal(Signal::continuous("r", Some(0.0)));
    for i in 0..n {
        let term = format!("cos(r*x{i})*sin(x{i})");
        let mut op = LogicalOperator::new(format!("S{i}"))
            .reads(&vars[i])
            .cost(&term)?;
        if i + 1 < n {
            op = op.transfer("r", &term)?;
        }
        spec = spec.op(op);
    }
    Ok(spec)
}
