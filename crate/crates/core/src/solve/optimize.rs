use serde::{Deserialize, Serialize};

use super::{Method, Solution, TauSchedule, TrajectoryPoint};
use crate::circuit::FieldTensor;
use crate::engine::{contract, Marginal, Query};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizeMode {
    /// Normalized first moment; assumes a single global minimum.
    #[default]
    Unique,
    /// Marginal argmax, lowest coordinate on ties.
    Multimodal,
}

/// Relative masses of the marginal's segments between local minima, keeping
/// those above one part in a thousand.
fn peak_masses(m: &Marginal) -> Vec<f64> {
    let d = &m.density;
    let mut masses = Vec::new();
    let mut acc = 0.0;
    for i in 0..d.len() {
        acc += m.weights[i] * d[i];
        let valley = i > 0 && i + 1 < d.len() && d[i] < d[i - 1] && d[i] <= d[i + 1];
        if valley {
            masses.push(acc);
            acc = 0.0;
        }
    }
    masses.push(acc);
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    masses
        .into_iter()
        .map(|x| x / total)
        .filter(|&k| k >= 1e-3)
        .collect()
}

/// Replaces the last marginal by the amplitude evaluated directly at the
/// fixed values, so its gates are applied exactly rather than through the
/// kernel projection of the earlier variables.
fn exact_conditional(
    t: &FieldTensor,
    m: &mut Marginal,
    values: &[f64],
    j: usize,
    tau: f64,
) -> Result<()> {
    let mut x = values.to_vec();
    let mut amps = Vec::with_capacity(m.nodes.len());
    for &node in &m.nodes {
        x[j] = node;
        amps.push(t.circuit().evaluate(&x)?.amplitude);
    }
    let base = amps
        .iter()
        .filter(|a| a.pass)
        .map(|a| a.cost)
        .fold(f64::INFINITY, f64::min);
    if !base.is_finite() {
        return Ok(());
    }
    m.density = amps
        .iter()
        .map(|a| if a.pass { a.factor * (-tau * (a.cost - base)).exp() } else { 0.0 })
        .collect();
    m.log_scale = 0.0;
    Ok(())
}

/// Minimizes the circuit's cost by sweeping τ upward, fixing the variables one
/// at a time from their marginals with earlier choices projected by kernel
/// deltas.
pub fn optimize(t: &FieldTensor, schedule: &TauSchedule, mode: OptimizeMode) -> Result<Solution> {
    let c = t.circuit();
    let nv = t.variables().len();
    let gated = t.spec().has_gates();
    let kernel = t.kernel();
    let mut trajectory = Vec::new();
    let mut values = vec![0.0; nv];
    let mut sharpness = vec![0.0; nv];
    let mut kappa = Vec::new();
    for &tau in schedule.values() {
        let mut q = Query::closed(t).with_tau(tau);
        for j in 0..nv {
            let r = contract(t, &q)?;
            if !(r.scaled_total > 0.0) {
                return Err(Error::InfeasibleBox);
            }
            let mut m = r.marginals[j].clone();
            if j == 0 {
                kappa = peak_masses(&m);
            }
            if gated && j + 1 == nv {
                exact_conditional(t, &mut m, &values, j, tau)?;
            }
            let set = &t.index_sets()[j];
            let mut v = match mode {
                OptimizeMode::Unique => m.mean(),
                OptimizeMode::Multimodal => m.argmax(),
            }
            .ok_or(Error::InfeasibleBox)?;
            if set.is_discrete() {
                v = v.round();
            }
            values[j] = v;
            sharpness[j] = m.spread().unwrap_or(0.0);
            let name = &t.variables()[j];
            q = if set.is_continuous() {
                q.pin(t, name, v, &kernel)?
            } else {
                q.window(t, name, v - 0.5, v + 0.5, false)?
            };
        }
        let objective = c.cost_at(&values)?;
        if !objective.is_finite() {
            return Err(Error::DivergentAmplitude(format!(
                "cost is {objective} at the extracted point"
            )));
        }
        trajectory.push(TrajectoryPoint {
            tau,
            values: values.clone(),
            objective,
        });
    }
    let last = trajectory.last().expect("schedule is nonempty");
    let method = match mode {
        OptimizeMode::Unique => Method::MomentUnique,
        OptimizeMode::Multimodal => Method::Argmax,
    };
    Ok(Solution {
        variables: t.variables().to_vec(),
        residual: last.objective,
        feasible: c.evaluate(&values)?.amplitude.pass,
        values,
        methods: vec![method; nv],
        sharpness,
        ftnilo: None,
        trajectory,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{constrained_quadratic_chain, quadratic_chain, tensorize, TensorMode};
    use crate::grid::{GridAxis, QuadratureRule};
    use crate::kernels::DeltaKernel;

    fn box_axes(n: usize, lo: f64, hi: f64, g: usize) -> Vec<GridAxis> {
        (0..n)
            .map(|i| GridAxis::new(format!("x{i}"), lo, hi, g, QuadratureRule::Trapezoid).unwrap())
            .collect()
    }

    #[test]
    fn convex_quadratic_at_origin() {
        let spec = quadratic_chain(&[1.0, 1.0], &[1.0], 1.0).unwrap();
        let ax = box_axes(2, -3.0, 3.0, 121);
        let k = DeltaKernel::default_for_cell(ax[0].cell_width()).unwrap();
        let t = tensorize(&spec, &ax, k, TensorMode::Composed).unwrap();
        let s = optimize(&t, &TauSchedule::new(vec![1.0, 4.0, 16.0]).unwrap(), OptimizeMode::Unique).unwrap();
        for v in &s.values {
            assert!(v.abs() <= ax[0].cell_width(), "{:?}", s.values);
        }
        assert_eq!(s.trajectory.len(), 3);
        assert!(s.feasible);
    }

    #[test]
    fn gate_is_respected() {
        let spec =
            constrained_quadratic_chain(&[1.0, 1.0], &[1.0], &[1.0, 1.0], -1.0, 1.0).unwrap();
        let ax = box_axes(2, -3.0, 3.0, 201);
        let k = DeltaKernel::default_for_cell(ax[0].cell_width()).unwrap();
        let t = tensorize(&spec, &ax, k, TensorMode::Composed).unwrap();
        let s = optimize(&t, &TauSchedule::default(), OptimizeMode::Unique).unwrap();
        assert!(s.feasible, "{:?}", s.values);
        let h = ax[0].cell_width();
        for v in &s.values {
            assert!((v + 0.5).abs() <= h, "{:?}", s.values);
        }
        assert!((s.residual - 0.75).abs() < 0.05);
    }

    #[test]
    fn schedule_validation() {
        assert!(TauSchedule::new(vec![]).is_err());
        assert!(TauSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(TauSchedule::new(vec![-1.0]).is_err());
        assert_eq!(TauSchedule::default().values(), &[1.0, 4.0, 16.0, 64.0]);
    }

    #[test]
    fn all_gated_box_is_infeasible() {
        let spec =
            constrained_quadratic_chain(&[1.0, 1.0], &[1.0], &[1.0, 1.0], -10.0, 1.0).unwrap();
        let ax = box_axes(2, -3.0, 3.0, 41);
        let k = DeltaKernel::default_for_cell(ax[0].cell_width()).unwrap();
        let t = tensorize(&spec, &ax, k, TensorMode::Composed).unwrap();
        let e = optimize(&t, &TauSchedule::default(), OptimizeMode::Unique).unwrap_err();
        assert_eq!(e, Error::InfeasibleBox);
    }
}
