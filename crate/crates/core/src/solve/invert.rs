use super::{Bracket, DegeneracyReport, Method, Solution};
use crate::circuit::FieldTensor;
use crate::engine::{contract, ContractionResult, FtniloNumber, Marginal, Measure, Query};
use crate::error::{Error, Result};
use crate::grid::{restrict_axis, IndexSet};

/// Raw-count ratio between kernel widths `w` and `2w` above which the
/// solution set is treated as a continuum. Isolated simple roots give 1, a
/// double root `√2`, a full-dimensional solution region 2.
const CONTINUUM_RATIO: f64 = 1.75;

fn residual(t: &FieldTensor, x: &[f64], y: &[f64]) -> Result<f64> {
    let out = t.circuit().evaluate(x)?.outputs;
    Ok(out
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Solves `f(X) = Y` for a box assumed to hold exactly one solution, via the
/// normalized first moments of the marginals.
pub fn invert_unique(t: &FieldTensor, y: &[f64]) -> Result<Solution> {
    let r = contract(t, &Query::project(t, y)?)?;
    let n = r.total();
    if n < 0.25 {
        return Err(Error::NoSolution { ftnilo: n });
    }
    if n > 1.5 {
        return Err(Error::AmbiguousSolution { ftnilo: n });
    }
    let values: Vec<f64> = r
        .marginals
        .iter()
        .map(|m| m.mean().ok_or(Error::NoSolution { ftnilo: n }))
        .collect::<Result<_>>()?;
    let sharpness = r.marginals.iter().map(|m| m.spread().unwrap_or(0.0)).collect();
    let pass = t.circuit().evaluate(&values)?.amplitude.pass;
    Ok(Solution {
        variables: t.variables().to_vec(),
        residual: residual(t, &values, y)?,
        methods: vec![Method::MomentUnique; values.len()],
        values,
        sharpness,
        feasible: pass,
        ftnilo: Some(FtniloNumber::new(n)),
        trajectory: Vec::new(),
        kappa: Vec::new(),
    })
}

struct Piece {
    lo: f64,
    hi: f64,
    include_hi: bool,
    collapse_ratio: Option<f64>,
}

/// Split node inside the middle half of `[lo, hi]` where the marginal is
/// smallest; near-ties go to the node closest to the midpoint, then the
/// lowest one.
fn valley(m: &Marginal, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo));
    let mid = 0.5 * (lo + hi);
    let inside: Vec<usize> = (0..m.nodes.len())
        .filter(|&i| m.nodes[i] >= a && m.nodes[i] <= b)
        .collect();
    if inside.is_empty() {
        return mid;
    }
    let fmax = m.density.iter().fold(0.0f64, |s, d| s.max(d.abs()));
    let fmin = inside.iter().map(|&i| m.density[i]).fold(f64::INFINITY, f64::min);
    let tol = fmin + 1e-12 * fmax;
    let mut best = None::<usize>;
    for &i in &inside {
        if m.density[i] > tol {
            continue;
        }
        let better = match best {
            None => true,
            Some(j) => (m.nodes[i] - mid).abs() < (m.nodes[j] - mid).abs(),
        };
        if better {
            best = Some(i);
        }
    }
    m.nodes[best.expect("at least one node attains the minimum")]
}

fn split(
    m: &Marginal,
    piece: Piece,
    min_separation: f64,
    cell: f64,
    out: &mut Vec<Piece>,
) -> Result<()> {
    let Piece { lo, hi, include_hi, .. } = piece;
    let mu0 = m.window_moment(0, lo, hi, include_hi);
    if mu0 < 0.5 {
        return Ok(());
    }
    if mu0 < 1.5 {
        out.push(piece);
        return Ok(());
    }
    let mu1 = m.window_moment(1, lo, hi, include_hi);
    let mu2 = m.window_moment(2, lo, hi, include_hi);
    let centred = (mu2 - mu1 * mu1 / mu0).abs();
    let spread = (centred / mu0).sqrt();
    if centred <= 0.02 * mu2.abs() + mu0 * cell * cell && spread < min_separation {
        out.push(Piece {
            collapse_ratio: Some(if mu2 != 0.0 { centred / mu2.abs() } else { 0.0 }),
            ..piece
        });
        return Ok(());
    }
    if hi - lo < min_separation {
        return Err(Error::NonIsolatedSolutions {
            variable: m.variable.clone(),
            lo,
            hi,
            count: mu0,
            evidence: None,
        });
    }
    let r = valley(m, lo, hi);
    let left = Piece { lo, hi: r, include_hi: false, collapse_ratio: None };
    let right = Piece { lo: r, hi, include_hi, collapse_ratio: None };
    split(m, left, min_separation, cell, out)?;
    split(m, right, min_separation, cell, out)
}

struct Protocol<'a> {
    t: &'a FieldTensor,
    min_separation: f64,
    out: Vec<Bracket>,
}

impl Protocol<'_> {
    fn descend(
        &mut self,
        q: Query,
        j: usize,
        r: ContractionResult,
        windows: &mut Vec<(f64, f64)>,
    ) -> Result<()> {
        let t = self.t;
        let nv = t.variables().len();
        let set = &t.index_sets()[j];
        let m = &r.marginals[j];
        let (lo, hi) = set.bounds();
        let cell = set.cell_width().unwrap_or(1.0);
        let mut pieces = Vec::new();
        let whole = Piece { lo, hi, include_hi: true, collapse_ratio: None };
        split(m, whole, self.min_separation, cell, &mut pieces)?;
        let name = t.variables()[j].clone();
        for p in pieces {
            let qj = q.clone().window(t, &name, p.lo, p.hi, p.include_hi)?;
            windows.push((p.lo, p.hi));
            if j + 1 < nv {
                let rj = contract(t, &qj)?;
                self.descend(qj, j + 1, rj, windows)?;
            } else {
                let moments = [0, 1, 2].map(|k| m.window_moment(k, p.lo, p.hi, p.include_hi));
                let values = if nv == 1 {
                    vec![moments[1] / moments[0]]
                } else {
                    let rj = contract(t, &qj)?;
                    rj.marginals
                        .iter()
                        .map(|mm| mm.mean().unwrap_or(f64::NAN))
                        .collect()
                };
                self.out.push(Bracket {
                    values,
                    lo: windows.iter().map(|w| w.0).collect(),
                    hi: windows.iter().map(|w| w.1).collect(),
                    moments,
                    collapse_ratio: p.collapse_ratio,
                });
            }
            windows.pop();
        }
        Ok(())
    }
}

/// Raises `NonIsolatedSolutions` when the raw count grows as the kernel
/// narrows, the signature of a solution set with positive volume.
fn check_continuum(t: &FieldTensor, y: &[f64]) -> Result<()> {
    let raw = Query::project(t, y)?.with_measure(Measure::Raw);
    let r1 = contract(t, &raw)?;
    let n1 = r1.total();
    if !(n1 > 0.0) {
        return Ok(());
    }
    let t2 = t.with_kernel(t.kernel().scaled(2.0)?)?;
    let n2 = contract(&t2, &raw)?.total();
    if n2 > 0.0 && n1 / n2 <= CONTINUUM_RATIO {
        return Ok(());
    }
    // widest half-peak region among the marginals
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (j, m) in r1.marginals.iter().enumerate() {
        let peak = m.density.iter().fold(0.0f64, |a, d| a.max(*d));
        let above: Vec<f64> = (0..m.nodes.len())
            .filter(|&i| m.density[i] > 0.5 * peak)
            .map(|i| m.nodes[i])
            .collect();
        let (Some(&a), Some(&b)) = (above.first(), above.last()) else {
            continue;
        };
        let (lo, hi) = t.index_sets()[j].bounds();
        let share = if hi > lo { (b - a) / (hi - lo) } else { 0.0 };
        if best.map_or(true, |(_, _, _, s)| share > s) {
            best = Some((j, a, b, share));
        }
    }
    let (j, a, b, _) = best.expect("positive mass has a peak");
    let evidence = if b > a {
        let full: Vec<(f64, f64)> = t.index_sets().iter().map(IndexSet::bounds).collect();
        let mut big = full.clone();
        big[j] = (a, b);
        let mut small = full;
        small[j] = (a, 0.5 * (a + b));
        renormalized_ratio(t, y, &big, &small).ok()
    } else {
        None
    };
    Err(Error::NonIsolatedSolutions {
        variable: t.variables()[j].clone(),
        lo: a,
        hi: b,
        count: n1,
        evidence,
    })
}

/// Enumerates every isolated solution in the box by recursive bracketing on
/// partial moments, one variable at a time.
pub fn invert_all(t: &FieldTensor, y: &[f64], min_separation: f64) -> Result<DegeneracyReport> {
    if !(min_separation > 0.0 && min_separation.is_finite()) {
        return Err(Error::Domain(format!(
            "min_separation must be positive, got {min_separation}"
        )));
    }
    check_continuum(t, y)?;
    let q = Query::project(t, y)?;
    let top = contract(t, &q)?;
    let total = top.total();
    let mut p = Protocol {
        t,
        min_separation,
        out: Vec::new(),
    };
    p.descend(q, 0, top, &mut Vec::new())?;
    let assigned: f64 = p.out.iter().map(|b| b.moments[0]).sum();
    Ok(DegeneracyReport {
        variables: t.variables().to_vec(),
        solutions: p.out,
        total: FtniloNumber::new(total),
        residual_mass: total - assigned,
    })
}

fn restrict(set: &IndexSet, lo: f64, hi: f64) -> Result<IndexSet> {
    match set {
        IndexSet::Continuous(a) => Ok(IndexSet::Continuous(restrict_axis(a, lo, hi)?)),
        IndexSet::Discrete { lo: a, hi: b, .. } => {
            IndexSet::discrete((*a).max(lo.ceil() as i64), (*b).min(hi.floor() as i64))
        }
        IndexSet::Point(x) => {
            if *x >= lo && *x <= hi {
                Ok(set.clone())
            } else {
                Err(Error::Domain(format!("pinned value {x} outside [{lo}, {hi}]")))
            }
        }
    }
}

/// `𝒩′/𝒩″` of the raw restricted density over two nested regions, given
/// per variable as `(lo, hi)`.
pub fn renormalized_ratio(
    t: &FieldTensor,
    y: &[f64],
    region_big: &[(f64, f64)],
    region_small: &[(f64, f64)],
) -> Result<f64> {
    let nv = t.variables().len();
    if region_big.len() != nv || region_small.len() != nv {
        return Err(Error::Domain(format!("regions must give {nv} intervals")));
    }
    for (j, (b, s)) in region_big.iter().zip(region_small).enumerate() {
        let eps = 1e-12 * (1.0 + b.0.abs().max(b.1.abs()));
        if !(s.0 < s.1 && b.0 < b.1) || s.0 < b.0 - eps || s.1 > b.1 + eps {
            return Err(Error::Domain(format!(
                "region for `{}`: [{}, {}] is not inside [{}, {}]",
                t.variables()[j],
                s.0,
                s.1,
                b.0,
                b.1
            )));
        }
    }
    let count = |region: &[(f64, f64)]| -> Result<f64> {
        let sets = t
            .index_sets()
            .iter()
            .zip(region)
            .map(|(s, &(lo, hi))| restrict(s, lo, hi))
            .collect::<Result<Vec<_>>>()?;
        let tr = t.with_index_sets(sets)?;
        let q = Query::project(&tr, y)?.with_measure(Measure::Raw);
        Ok(contract(&tr, &q)?.total())
    };
    let n_big = count(region_big)?;
    let n_small = count(region_small)?;
    if !(n_small >= 1e-12) {
        return Err(Error::DegenerateRatio(n_small));
    }
    Ok(n_big / n_small)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{inversion_chain, tensorize, TensorMode};
    use crate::grid::{GridAxis, QuadratureRule};
    use crate::kernels::DeltaKernel;

    fn one_var(term: &str, lo: f64, hi: f64, n: usize, mode: TensorMode) -> FieldTensor {
        let spec = inversion_chain(&["x"], &[term]).unwrap();
        let axis = GridAxis::new("x", lo, hi, n, QuadratureRule::Trapezoid).unwrap();
        let k = DeltaKernel::default_for_cell(axis.cell_width()).unwrap();
        tensorize(&spec, &[axis], k, mode).unwrap()
    }

    #[test]
    fn pow2_unique() {
        let t = one_var("2^x", 0.0, 5.0, 501, TensorMode::Composed);
        let s = invert_unique(&t, &[8.0]).unwrap();
        assert!((s.values[0] - 3.0).abs() < 0.02, "{:?}", s.values);
        assert!(s.residual < 0.2);
    }

    #[test]
    fn square_roots_enumerated() {
        for mode in [TensorMode::Grid, TensorMode::Composed] {
            let t = one_var("x^2", -5.0, 5.0, 501, mode);
            let r = invert_all(&t, &[4.0], 0.1).unwrap();
            let xs: Vec<f64> = r.solutions.iter().map(|b| b.values[0]).collect();
            assert_eq!(xs.len(), 2, "{mode:?}: {xs:?}");
            assert!((xs[0] + 2.0).abs() < 0.02 && (xs[1] - 2.0).abs() < 0.02, "{xs:?}");
            assert!(r.residual_mass.abs() < 0.05);
        }
    }

    #[test]
    fn sine_roots_enumerated() {
        let t = one_var("sin(pi*x)", -2.5, 2.5, 501, TensorMode::Composed);
        let r = invert_all(&t, &[0.0], 0.1).unwrap();
        let xs: Vec<f64> = r.solutions.iter().map(|b| b.values[0]).collect();
        assert_eq!(xs.len(), 5, "{xs:?}");
        for (x, want) in xs.iter().zip([-2.0, -1.0, 0.0, 1.0, 2.0]) {
            assert!((x - want).abs() < 0.02, "{xs:?}");
        }
    }

    #[test]
    fn relu_flat_region_is_reported() {
        let t = one_var("max(0, x)", -2.0, 2.0, 401, TensorMode::Composed);
        let e = invert_all(&t, &[0.0], 0.1).unwrap_err();
        let Error::NonIsolatedSolutions { lo, hi, evidence, .. } = e else {
            panic!("{e:?}");
        };
        assert!(lo < -1.9 && hi > -0.1 && hi < 0.1, "[{lo}, {hi}]");
        assert!((evidence.unwrap() - 2.0).abs() < 0.2);
    }

    #[test]
    fn relu_ratio() {
        let t = one_var("max(0, x)", -2.0, 2.0, 401, TensorMode::Composed);
        let r = renormalized_ratio(&t, &[0.0], &[(-2.0, 0.0)], &[(-1.0, 0.0)]).unwrap();
        assert!((r - 2.0).abs() < 0.2, "{r}");
        let r = renormalized_ratio(&t, &[0.0], &[(-1.0, 1.0)], &[(-1.0, 0.0)]).unwrap();
        assert!(r < 1.8, "{r}");
        let e = renormalized_ratio(&t, &[0.0], &[(-1.0, 0.0)], &[(-2.0, 0.0)]).unwrap_err();
        assert_eq!(e.name(), "DomainError");
        let e = renormalized_ratio(&t, &[5.0], &[(-1.0, 0.0)], &[(-0.5, 0.0)]).unwrap_err();
        assert_eq!(e.name(), "DegenerateRatio");
    }

    #[test]
    fn unique_errors() {
        let t = one_var("x^2", -5.0, 5.0, 501, TensorMode::Composed);
        assert_eq!(invert_unique(&t, &[-1.0]).unwrap_err().name(), "NoSolution");
        assert_eq!(invert_unique(&t, &[4.0]).unwrap_err().name(), "AmbiguousSolution");
    }
}
