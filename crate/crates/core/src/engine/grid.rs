use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{
    boundary_factor, projected_outputs, variable_weights, ContractionResult, Marginal, Measure,
    Query,
};
use crate::circuit::{
    BondGauge, BondLayout, FieldTensor, GaugeInsertion, GridNetwork, GridSite, SignalDomain, TensorMode,
};
use crate::error::{Error, Result};
use crate::grid::{GridAxis, QuadratureRule};

/// Headroom kept before environments are rescaled.
const RESCALE_ABOVE: f64 = 1e100;
const RESCALE_BELOW: f64 = 1e-100;

/// Divides `v` by its largest magnitude once that leaves
/// `[RESCALE_BELOW, RESCALE_ABOVE]`, returning the log of the factor.
/// Moderate environments stay unscaled so integer sums stay exact.
fn normalize(v: &mut [f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m > 0.0 && m.is_finite() && !(RESCALE_BELOW..=RESCALE_ABOVE).contains(&m) {
        v.iter_mut().for_each(|x| *x /= m);
        m.ln()
    } else {
        0.0
    }
}

struct Prepared<'a> {
    net: &'a GridNetwork,
    /// Quadrature weight times query multiplier, per site.
    wx: Vec<Vec<f64>>,
    /// Query multiplier alone, per site.
    mult: Vec<Vec<f64>>,
    /// Shifted amplitude per row, per site.
    amp: Vec<Vec<f64>>,
    /// Log of the amplitude shift, per site.
    shift: Vec<f64>,
}

fn prepare<'a>(t: &'a FieldTensor, q: &Query, tau: f64) -> Result<Prepared<'a>> {
    let net = t.grid.as_ref().expect("grid tensor has a network");
    let sets = t.index_sets();
    let mut wx = Vec::new();
    let mut mult = Vec::new();
    let mut amp = Vec::new();
    let mut shift = Vec::new();
    for site in &net.sites {
        wx.push(variable_weights(&sets[site.var], &q.multipliers[site.var]));
        mult.push(
            q.multipliers[site.var]
                .clone()
                .unwrap_or_else(|| vec![1.0; site.n_x]),
        );
        let base = if site.min_cost.is_finite() { site.min_cost } else { 0.0 };
        amp.push(
            site.amps
                .iter()
                .map(|a| {
                    if a.pass {
                        a.factor * (-tau * (a.cost - base)).exp()
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
        shift.push(-tau * base);
    }
    Ok(Prepared {
        net,
        wx,
        mult,
        amp,
        shift,
    })
}

fn frequency_axis(k_max: f64, n_k: usize) -> Result<GridAxis> {
    GridAxis::new("k", -k_max, k_max, n_k, QuadratureRule::Trapezoid)
}

/// Applies the gauge pair along one bond position. `left` selects the
/// left-environment form `Σ_r w_r L(r) M(r, r')`; otherwise the right form
/// `w_r Σ_{r'} M(r, r') V(r')`. Returns the largest relative imaginary part.
fn apply_gauge(
    v: &mut [f64],
    bond: &BondLayout,
    g: &GaugeInsertion,
    axis: &GridAxis,
    left: bool,
) -> Result<f64> {
    let p = g.position;
    let d = bond.dims[p];
    let s = bond.strides[p];
    let r = axis.nodes();
    let w = axis.weights();
    let slices = bond.size / d;
    let mut residual: f64 = 0.0;
    let freq = match g.gauge {
        BondGauge::Identity => None,
        BondGauge::Fourier { k_max, n_k } => Some(frequency_axis(k_max, n_k)?),
    };
    let norm = 1.0 / (2.0 * PI).sqrt();
    for m in 0..slices {
        let (hi, lo) = (m / s, m % s);
        let at = |i: usize| (hi * d + i) * s + lo;
        let slice: Vec<f64> = (0..d).map(|i| v[at(i)]).collect();
        let out: Vec<f64> = match &freq {
            None => {
                if left {
                    (0..d).map(|i| w[i] * slice[i] / w[i]).collect()
                } else {
                    (0..d).map(|i| slice[i] / w[i] * w[i]).collect()
                }
            }
            Some(k) => {
                let kn = k.nodes();
                let kw = k.weights();
                // left: A(r,k) = e^{ikr}/√(2π) applied first; right: B(k,r') first
                let sign = if left { 1.0 } else { -1.0 };
                let input: Vec<f64> = if left {
                    (0..d).map(|i| w[i] * slice[i]).collect()
                } else {
                    slice.clone()
                };
                let spectrum: Vec<Complex64> = kn
                    .par_iter()
                    .map(|&kk| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (ri, &x) in r.iter().zip(&input) {
                            if x != 0.0 {
                                acc += Complex64::from_polar(x, sign * kk * ri);
                            }
                        }
                        acc * norm
                    })
                    .collect();
                let back: Vec<Complex64> = r
                    .par_iter()
                    .map(|&ri| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for ((&kk, &wk), f) in kn.iter().zip(kw).zip(&spectrum) {
                            acc += f * Complex64::from_polar(wk, -sign * kk * ri);
                        }
                        acc * norm
                    })
                    .collect();
                let re_max = back.iter().fold(0.0f64, |a, c| a.max(c.re.abs()));
                let im_max = back.iter().fold(0.0f64, |a, c| a.max(c.im.abs()));
                if re_max > 0.0 {
                    residual = residual.max(im_max / re_max);
                }
                if left {
                    back.iter().map(|c| c.re).collect()
                } else {
                    back.iter().zip(w).map(|(c, wi)| c.re * wi).collect()
                }
            }
        };
        for (i, x) in out.into_iter().enumerate() {
            v[at(i)] = x;
        }
    }
    Ok(residual)
}

fn gauge_axis<'a>(net: &'a GridNetwork, g: &GaugeInsertion) -> &'a GridAxis {
    let s = net.bonds[g.bond].signals[g.position];
    net.signal_sets[s]
        .as_ref()
        .and_then(|x| x.axis())
        .expect("gauge sits on a continuous signal")
}

fn check_reached(t: &FieldTensor, site: &GridSite, row: usize) -> Result<()> {
    match site.out_of_range.binary_search_by_key(&row, |v| v.0) {
        Ok(i) => {
            let (_, s, value) = site.out_of_range[i];
            let (lo, hi) = match t.signal_domains()[s] {
                SignalDomain::Discrete { lo, hi } => (lo, hi),
                SignalDomain::Continuous => unreachable!("range violations are discrete"),
            };
            Err(Error::Range {
                signal: t.spec().signals[s].name.clone(),
                value,
                lo,
                hi,
            })
        }
        Err(_) => Ok(()),
    }
}

pub(super) fn contract(t: &FieldTensor, q: &Query) -> Result<ContractionResult> {
    let tau = q.tau.unwrap_or(t.spec().tau);
    let sets = t.index_sets();
    let projected = projected_outputs(t, q);
    let counting = q.measure == Measure::Counting && projected.iter().any(|&p| p);
    let n_cont = sets.iter().filter(|s| s.is_continuous()).count();
    if counting && n_cont > 0 && !(n_cont == 1 && sets.len() == 1) {
        return Err(Error::Mode(
            "counting measure in grid mode needs a single continuous variable; \
             use composed mode or the raw measure"
                .into(),
        ));
    }
    let pre = prepare(t, q, tau)?;
    let net = pre.net;
    let n = net.sites.len();
    let bonds = &net.bonds;
    let gauge = t.gauge;
    let mut imag: f64 = 0.0;

    // boundary vector on the last bond
    let c = t.circuit();
    let kernel = t.kernel();
    let last = &bonds[n];
    let out_pos: Vec<usize> = c
        .outputs()
        .iter()
        .map(|o| {
            last.signals
                .iter()
                .position(|s| s == o)
                .expect("outputs are live on the last bond")
        })
        .collect();
    let mut boundary: Vec<f64> = (0..last.size)
        .map(|b| {
            let mut v = 1.0;
            for (k, &o) in c.outputs().iter().enumerate() {
                let p = out_pos[k];
                let set = net.signal_sets[o].as_ref().expect("output axis");
                let y = set.node(last.component(b, p));
                v *= boundary_factor(q.boundaries[k], &t.signal_domains()[o], &kernel, y);
            }
            v
        })
        .collect();

    // left environments, weighted by their bond weights
    let mut lt: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut ls_l = vec![0.0; n + 1];
    lt.push(bonds[0].weight.clone());
    for k in 0..n {
        let site = &net.sites[k];
        let (inb, outb) = (&bonds[k], &bonds[k + 1]);
        let mut next = vec![0.0; outb.size];
        for b in 0..inb.size {
            let lb = lt[k][b];
            if lb == 0.0 {
                continue;
            }
            for xi in 0..site.n_x {
                let row = b * site.n_x + xi;
                let a = pre.amp[k][row] * pre.wx[k][xi];
                if a == 0.0 {
                    continue;
                }
                if !site.out_of_range.is_empty() {
                    check_reached(t, site, row)?;
                }
                let f = lb * a;
                site.for_each_out(row, b, inb, outb, |j, v| next[j] += f * v);
            }
        }
        ls_l[k + 1] = ls_l[k] + pre.shift[k] + normalize(&mut next);
        if let Some(g) = gauge.filter(|g| g.bond == k + 1) {
            imag = imag.max(apply_gauge(&mut next, outb, &g, gauge_axis(net, &g), true)?);
        }
        next.iter_mut().zip(&outb.weight).for_each(|(x, w)| *x *= w);
        lt.push(next);
    }

    // right environments, weighted likewise
    let mut rt: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut ls_r = vec![0.0; n + 1];
    boundary.iter_mut().zip(&last.weight).for_each(|(x, w)| *x *= w);
    if let Some(g) = gauge.filter(|g| g.bond == n) {
        imag = imag.max(apply_gauge(&mut boundary, last, &g, gauge_axis(net, &g), false)?);
    }
    ls_r[n] = normalize(&mut boundary);
    rt[n] = boundary;
    for k in (0..n).rev() {
        let site = &net.sites[k];
        let (inb, outb) = (&bonds[k], &bonds[k + 1]);
        let right = &rt[k + 1];
        let mut cur: Vec<f64> = (0..inb.size)
            .into_par_iter()
            .map(|b| {
                let mut acc = 0.0;
                for xi in 0..site.n_x {
                    let row = b * site.n_x + xi;
                    let a = pre.amp[k][row] * pre.wx[k][xi];
                    if a == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    site.for_each_out(row, b, inb, outb, |j, v| inner += v * right[j]);
                    acc += a * inner;
                }
                acc
            })
            .collect();
        cur.iter_mut().zip(&inb.weight).for_each(|(x, w)| *x *= w);
        if let Some(g) = gauge.filter(|g| g.bond == k && k > 0) {
            imag = imag.max(apply_gauge(&mut cur, inb, &g, gauge_axis(net, &g), false)?);
        }
        ls_r[k] = ls_r[k + 1] + pre.shift[k] + normalize(&mut cur);
        rt[k] = cur;
    }

    // per-site marginals
    let mut marginals = vec![None; t.variables().len()];
    for k in 0..n {
        let site = &net.sites[k];
        let (inb, outb) = (&bonds[k], &bonds[k + 1]);
        let (left, right) = (&lt[k], &rt[k + 1]);
        let amp = &pre.amp[k];
        let mut density: Vec<f64> = (0..site.n_x)
            .into_par_iter()
            .map(|xi| {
                let mut acc = 0.0;
                for b in 0..inb.size {
                    let lb = left[b];
                    let row = b * site.n_x + xi;
                    if lb == 0.0 || amp[row] == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    site.for_each_out(row, b, inb, outb, |j, v| inner += v * right[j]);
                    acc += lb * amp[row] * inner;
                }
                acc * pre.mult[k][xi]
            })
            .collect();
        let set = &sets[site.var];
        if counting && set.is_continuous() {
            for (xi, d) in density.iter_mut().enumerate() {
                if *d != 0.0 {
                    *d *= t.counting_weight(&[set.node(xi)], &projected)?;
                }
            }
        }
        marginals[site.var] = Some(Marginal {
            variable: t.variables()[site.var].clone(),
            nodes: set.nodes(),
            weights: set.weights(),
            density,
            log_scale: ls_l[k] + ls_r[k + 1] + pre.shift[k],
        });
    }
    Ok(ContractionResult {
        marginals: marginals
            .into_iter()
            .map(|m| m.expect("every variable has a site"))
            .collect(),
        scaled_total: 0.0,
        log_scale: 0.0,
        mode: TensorMode::Grid,
        truncation_loss: net.truncation_loss,
        gauge_imag_residual: imag,
    })
}
