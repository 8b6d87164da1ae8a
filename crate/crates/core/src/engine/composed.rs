use std::sync::Arc;

use rayon::prelude::*;

use super::{boundary_factor, projected_outputs, ContractionResult, Marginal, Measure, Query};
use crate::circuit::{FieldTensor, NodeTable, TensorMode};
use crate::error::{Error, Result};
use crate::sum::pairwise_sum_by;

fn counting_weights(t: &FieldTensor, table: &NodeTable, projected: &[bool]) -> Result<Arc<Vec<f64>>> {
    let compute = || -> Result<Arc<Vec<f64>>> {
        let w: Vec<f64> = (0..table.n_nodes)
            .into_par_iter()
            .map(|node| t.counting_weight(&t.node_point(table, node), projected))
            .collect::<Result<_>>()?;
        Ok(Arc::new(w))
    };
    let all: Vec<bool> = projected_outputs_all(t);
    if projected == all.as_slice() {
        table.counting_all.get_or_init(compute).clone()
    } else {
        compute()
    }
}

fn projected_outputs_all(t: &FieldTensor) -> Vec<bool> {
    let q = Query {
        boundaries: vec![super::Boundary::Project(0.0); t.circuit().outputs().len()],
        measure: Measure::Counting,
        tau: None,
        multipliers: Vec::new(),
    };
    projected_outputs(t, &q)
}

pub(super) fn contract(t: &FieldTensor, q: &Query) -> Result<ContractionResult> {
    let table = t.table.as_ref().expect("composed tensor has a node table");
    let tau = q.tau.unwrap_or(t.spec().tau);
    let kernel = t.kernel();
    let sets = t.index_sets();
    let nv = sets.len();
    let outs = t.circuit().outputs();
    let domains = t.signal_domains();

    let min_cost = table
        .amps
        .iter()
        .filter(|a| a.pass && a.factor != 0.0)
        .map(|a| a.cost)
        .fold(f64::INFINITY, f64::min);
    let shift = if min_cost.is_finite() { min_cost } else { 0.0 };
    if table.amps.iter().any(|a| a.pass && !a.cost.is_finite()) {
        return Err(Error::DivergentAmplitude("non-finite cost term".into()));
    }

    let projected = projected_outputs(t, q);
    let counting = if q.measure == Measure::Counting && projected.iter().any(|&p| p) {
        Some(counting_weights(t, table, &projected)?)
    } else {
        None
    };
    let set_weights: Vec<Vec<f64>> = sets.iter().map(|s| s.weights()).collect();

    // density times the quadrature weight of every variable
    let weighted: Vec<f64> = (0..table.n_nodes)
        .into_par_iter()
        .map(|node| {
            let a = &table.amps[node];
            if !a.pass {
                return 0.0;
            }
            let mut d = a.factor * (-tau * (a.cost - shift)).exp();
            for (k, (&o, b)) in outs.iter().zip(&q.boundaries).enumerate() {
                d *= boundary_factor(*b, &domains[o], &kernel, table.outputs[node * table.n_out + k]);
            }
            if let Some(c) = &counting {
                d *= c[node];
            }
            for v in 0..nv {
                let i = table.index_of(node, v);
                if let Some(m) = &q.multipliers[v] {
                    d *= m[i];
                }
                d *= set_weights[v][i];
            }
            d
        })
        .collect();

    let log_scale = if min_cost.is_finite() { -tau * shift } else { 0.0 };
    let marginals = (0..nv)
        .map(|v| {
            let len = table.dims[v];
            let stride = table.strides[v];
            let others = table.n_nodes / len;
            let density = (0..len)
                .map(|i| {
                    // enumerate nodes whose v-index is i in row-major order
                    let s = pairwise_sum_by(others, |m| {
                        let hi = m / stride;
                        let lo = m % stride;
                        weighted[(hi * len + i) * stride + lo]
                    });
                    s / set_weights[v][i]
                })
                .collect();
            Marginal {
                variable: t.variables()[v].clone(),
                nodes: sets[v].nodes(),
                weights: set_weights[v].clone(),
                density,
                log_scale,
            }
        })
        .collect();
    Ok(ContractionResult {
        marginals,
        scaled_total: 0.0,
        log_scale,
        mode: TensorMode::Composed,
        truncation_loss: 0.0,
        gauge_imag_residual: 0.0,
    })
}
