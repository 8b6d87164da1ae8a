use serde::Serialize;

use crate::circuit::{BondGauge, FieldTensor, TensorMode};
use crate::engine::{contract, Boundary, Measure, Query};
use crate::error::{Error, Result};
use crate::grid::IndexSet;

/// `f(x)_j = ∫ y_j Φ(x, y) dy`, normalized by `∫ Φ(x, y) dy`.
///
/// Composed tensors evaluate the circuit exactly; grid tensors pin every
/// variable and contract with linear closures on the outputs.
pub fn forward_eval(t: &FieldTensor, x: &[f64]) -> Result<Vec<f64>> {
    let vars = t.variables();
    if x.len() != vars.len() {
        return Err(Error::Domain(format!(
            "{} coordinates for {} variables",
            x.len(),
            vars.len()
        )));
    }
    for ((name, set), &v) in vars.iter().zip(t.index_sets()).zip(x) {
        let (lo, hi) = set.bounds();
        if !(v >= lo && v <= hi) {
            return Err(Error::OutOfBox {
                variable: name.clone(),
                value: v,
                lo,
                hi,
            });
        }
    }
    if t.mode() == TensorMode::Composed {
        return Ok(t.circuit().evaluate(x)?.outputs);
    }
    let pinned = t.with_index_sets(x.iter().map(|&v| IndexSet::Point(v)).collect())?;
    let closed = Query::closed(&pinned);
    let norm = contract(&pinned, &closed)?.total();
    if !(norm > 0.0) {
        return Err(Error::DivergentAmplitude(
            "the pinned point carries no amplitude".into(),
        ));
    }
    (0..closed.boundaries.len())
        .map(|j| {
            let mut q = closed.clone();
            q.boundaries[j] = Boundary::Linear;
            Ok(contract(&pinned, &q)?.total() / norm)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeCheck {
    pub plain: Vec<f64>,
    pub gauged: Vec<f64>,
    /// `max_j |Ω_j(gauged) − Ω_j(plain)| / |Ω_j(plain)|`.
    pub deviation: f64,
    pub imag_residual: f64,
}

/// Recontracts with a transform pair on `signal`'s bond and compares the
/// normalized first moments against the plain contraction.
pub fn gauge_pair_check(
    t: &FieldTensor,
    y: &[f64],
    signal: &str,
    gauge: BondGauge,
) -> Result<GaugeCheck> {
    let q = Query::project(t, y)?.with_measure(Measure::Raw);
    let means = |r: &crate::engine::ContractionResult| -> Result<Vec<f64>> {
        r.marginals
            .iter()
            .map(|m| m.mean().ok_or(Error::NoSolution { ftnilo: r.total() }))
            .collect()
    };
    let plain = means(&contract(t, &q)?)?;
    let gt = t.with_gauge(signal, gauge)?;
    let r = contract(&gt, &q)?;
    let gauged = means(&r)?;
    let deviation = plain
        .iter()
        .zip(&gauged)
        .map(|(p, g)| (g - p).abs() / p.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(GaugeCheck {
        plain,
        gauged,
        deviation,
        imag_residual: r.gauge_imag_residual,
    })
}
