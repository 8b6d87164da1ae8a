//! Zero counting and location for truncated zeta series on rectangles of
//! the complex plane.
//!
//! `s = x + iy` is broadcast along a chain of `N` term operators that
//! accumulate the real and imaginary partial sums `(z, z′)`; the terminal
//! kernel deltas `δ_w(z_N) δ_w(z′_N)` then give a smoothed zero density over
//! the `(x, y)` grid. Both inputs are broadcast exactly, so the tensor is
//! evaluated in composed form.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::format_g;
use crate::grid::{GridAxis, QuadratureRule};
use crate::kernels::DeltaKernel;
use crate::sum::pairwise_sum_by;

/// Counts at or below this are treated as numerically zero when forming
/// baselines.
pub const COUNT_FLOOR: f64 = 1e-9;

/// A located peak must exceed the empty-box baseline by this factor.
pub const PEAK_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Series {
    /// `Σ 1/n^s`, valid for `Re s > 1`.
    #[serde(rename = "re_gt_1")]
    ReGt1,
    /// `Σ (n/(n+1)^s − (n−s)/n^s) = (s − 1) ζ(s)`, valid for `Re s > 0`.
    #[serde(rename = "strip")]
    Strip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Linear,
    Donut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaRegionSpec {
    pub series: Series,
    pub trunc_n: usize,
    pub re_range: (f64, f64),
    pub im_range: (f64, f64),
    /// Half-width of the excluded band around `Re s = 1/2` (strip only).
    #[serde(default)]
    pub exclusion_band: f64,
    #[serde(default)]
    pub topology: Topology,
}

impl ZetaRegionSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.re_range;
        let (c, d) = self.im_range;
        if self.trunc_n == 0 {
            return Err(Error::Domain("trunc_n must be at least 1".into()));
        }
        if !(a < b && c < d) || ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("region ranges must be finite with lo < hi".into()));
        }
        match self.series {
            Series::ReGt1 if a <= 1.0 => Err(Error::Domain(format!(
                "re_gt_1 needs re_range inside (1, inf), got [{a}, {b}]"
            ))),
            Series::Strip if a <= 0.0 || b >= 1.0 => Err(Error::Domain(format!(
                "strip needs re_range inside (0, 1), got [{a}, {b}]"
            ))),
            _ if !(self.exclusion_band >= 0.0) => Err(Error::Domain(format!(
                "exclusion_band must be nonnegative, got {}",
                self.exclusion_band
            ))),
            Series::ReGt1 if self.exclusion_band > 0.0 => Err(Error::Domain(
                "exclusion_band applies to the strip series only".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn term(series: Series, n: usize, x: f64, y: f64) -> (f64, f64) {
    let nf = n as f64;
    let ln = nf.ln();
    let mag = (-x * ln).exp();
    let (sn, cs) = (y * ln).sin_cos();
    match series {
        Series::ReGt1 => (mag * cs, -mag * sn),
        Series::Strip => {
            let ln1 = (nf + 1.0).ln();
            let mag1 = nf * (-x * ln1).exp();
            let (sn1, cs1) = (y * ln1).sin_cos();
            let a = nf - x;
            (
                mag1 * cs1 - mag * (a * cs - y * sn),
                -mag1 * sn1 - mag * (-a * sn - y * cs),
            )
        }
    }
}

/// Real and imaginary parts of the `n`-th term at `s = s_re + i s_im`.
pub fn zeta_term(series: Series, n: usize, s_re: f64, s_im: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Domain("series terms start at n = 1".into()));
    }
    match series {
        Series::ReGt1 if s_re <= 1.0 => Err(Error::Domain(format!(
            "re_gt_1 series needs Re s > 1, got {s_re}"
        ))),
        Series::Strip if !(s_re > 0.0 && s_re < 1.0) => Err(Error::Domain(format!(
            "strip series needs 0 < Re s < 1, got {s_re}"
        ))),
        _ => Ok(term(series, n, s_re, s_im)),
    }
}

/// Grid axes for a region; the real axis gains a node when one would sit
/// exactly on `Re s = 1/2`.
pub fn zeta_axes(spec: &ZetaRegionSpec, nx: usize, ny: usize) -> Result<(GridAxis, GridAxis)> {
    let (a, b) = spec.re_range;
    let mut x = GridAxis::new("re", a, b, nx, QuadratureRule::Trapezoid)?;
    if x.nodes().iter().any(|&v| (v - 0.5).abs() < 1e-9 * x.cell_width()) {
        x = GridAxis::new("re", a, b, nx + 1, QuadratureRule::Trapezoid)?;
    }
    let (c, d) = spec.im_range;
    let y = GridAxis::new("im", c, d, ny, QuadratureRule::Trapezoid)?;
    Ok((x, y))
}

/// Smoothed zero density on an `(x, y)` grid.
#[derive(Debug, Clone)]
pub struct ZetaTensor {
    spec: ZetaRegionSpec,
    x: GridAxis,
    y: GridAxis,
    kernel: DeltaKernel,
    /// `(z_N, z′_N)` per node, `x` index major.
    z: Vec<(f64, f64)>,
}

/// Runs the operator chain for one `s`. The linear build carries `s` down a
/// chain of copies; the donut build reads it from a ring of `N` copies
/// closed on the input, with the region indicator on every link.
fn accumulate(spec: &ZetaRegionSpec, x0: f64, y0: f64) -> (f64, f64) {
    let n_terms = spec.trunc_n;
    let inside = |x: f64| (x >= spec.re_range.0 && x <= spec.re_range.1) as u8 as f64;
    let (mut z, mut zp) = (0.0, 0.0);
    match spec.topology {
        Topology::Linear => {
            // every copy x_n = x_{n-1} is exact, so each term sees the input
            for n in 1..=n_terms {
                let (a, b) = term(spec.series, n, x0, y0);
                z += a;
                zp += b;
            }
        }
        Topology::Donut => {
            let mut ring = vec![(x0, y0); n_terms];
            let mut gate = 1.0;
            for n in 1..=n_terms {
                let prev = ring[(n - 1) % n_terms];
                ring[n % n_terms] = prev;
                gate *= inside(prev.0);
                let (xn, yn) = ring[n % n_terms];
                let (a, b) = term(spec.series, n, xn, yn);
                z += a;
                zp += b;
            }
            if gate == 0.0 {
                return (f64::INFINITY, f64::INFINITY);
            }
        }
    }
    (z, zp)
}

/// Direct evaluation of the truncated series.
pub fn truncated_series(series: Series, trunc_n: usize, x: f64, y: f64) -> (f64, f64) {
    let (mut z, mut zp) = (0.0, 0.0);
    for n in 1..=trunc_n {
        let (a, b) = term(series, n, x, y);
        z += a;
        zp += b;
    }
    (z, zp)
}

/// Builds the zero-density tensor for `spec` on the given axes.
pub fn build_zeta_ftn(
    spec: &ZetaRegionSpec,
    x: &GridAxis,
    y: &GridAxis,
    kernel: DeltaKernel,
) -> Result<ZetaTensor> {
    spec.validate()?;
    let eps = 1e-12;
    if x.lo() < spec.re_range.0 - eps
        || x.hi() > spec.re_range.1 + eps
        || y.lo() < spec.im_range.0 - eps
        || y.hi() > spec.im_range.1 + eps
    {
        return Err(Error::Domain("axes exceed the region".into()));
    }
    Ok(build_unchecked(spec, x, y, kernel))
}

fn build_unchecked(spec: &ZetaRegionSpec, x: &GridAxis, y: &GridAxis, kernel: DeltaKernel) -> ZetaTensor {
    let (xs, ys) = (x.nodes(), y.nodes());
    let ny = ys.len();
    let z = (0..xs.len() * ny)
        .into_par_iter()
        .map(|k| accumulate(spec, xs[k / ny], ys[k % ny]))
        .collect();
    ZetaTensor {
        spec: spec.clone(),
        x: x.clone(),
        y: y.clone(),
        kernel,
        z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroCount {
    /// `∫∫ δ_w(z_N) δ_w(z′_N) dx dy` over the unexcluded box.
    pub count: f64,
    pub peak_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroLocation {
    pub re: f64,
    pub im: f64,
    pub count: f64,
    pub baseline: f64,
}

impl ZetaTensor {
    pub fn spec(&self) -> &ZetaRegionSpec {
        &self.spec
    }

    pub fn axes(&self) -> (&GridAxis, &GridAxis) {
        (&self.x, &self.y)
    }

    /// `(z_N, z′_N)` at node `(i, j)`.
    pub fn accumulated(&self, i: usize, j: usize) -> (f64, f64) {
        self.z[i * self.y.n_points() + j]
    }

    /// Density per node, `x` index major; the exclusion band is zeroed.
    pub fn density(&self) -> Vec<f64> {
        let ny = self.y.n_points();
        let xs = self.x.nodes();
        let band = self.spec.exclusion_band;
        self.z
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                if band > 0.0 && (xs[k / ny] - 0.5).abs() < band {
                    0.0
                } else {
                    self.kernel.eval(a) * self.kernel.eval(b)
                }
            })
            .collect()
    }

    pub fn count(&self) -> ZeroCount {
        let d = self.density();
        let ny = self.y.n_points();
        let (wx, wy) = (self.x.weights(), self.y.weights());
        let count = pairwise_sum_by(d.len(), |k| wx[k / ny] * wy[k % ny] * d[k]);
        let peak_density = d.iter().fold(0.0f64, |a, &v| a.max(v));
        ZeroCount {
            count,
            peak_density,
        }
    }

    /// Marginal densities over `x` and over `y`.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.density();
        let (nx, ny) = (self.x.n_points(), self.y.n_points());
        let (wx, wy) = (self.x.weights(), self.y.weights());
        let fx = (0..nx)
            .map(|i| pairwise_sum_by(ny, |j| wy[j] * d[i * ny + j]))
            .collect();
        let fy = (0..ny)
            .map(|j| pairwise_sum_by(nx, |i| wx[i] * d[i * ny + j]))
            .collect();
        (fx, fy)
    }

    /// Three-column CSV heatmap `re,im,density`.
    pub fn to_csv(&self) -> String {
        let d = self.density();
        let ny = self.y.n_points();
        let mut out = String::from("re,im,density\n");
        for (k, v) in d.iter().enumerate() {
            out.push_str(&format_g(self.x.nodes()[k / ny], 12));
            out.push(',');
            out.push_str(&format_g(self.y.nodes()[k % ny], 12));
            out.push(',');
            out.push_str(&format_g(*v, 12));
            out.push('\n');
        }
        out
    }
}

pub fn count_zeros_box(spec: &ZetaRegionSpec, x: &GridAxis, y: &GridAxis, kernel: DeltaKernel) -> Result<ZeroCount> {
    Ok(build_zeta_ftn(spec, x, y, kernel)?.count())
}

/// Count in the zero-free box `[1.1, 2] × im_range` with the same series,
/// kernel and node counts, floored at [`COUNT_FLOOR`].
pub fn empty_box_baseline(spec: &ZetaRegionSpec, nx: usize, ny: usize, kernel: DeltaKernel) -> Result<f64> {
    spec.validate()?;
    let empty = ZetaRegionSpec {
        re_range: (1.1, 2.0),
        exclusion_band: 0.0,
        ..spec.clone()
    };
    let x = GridAxis::new("re", 1.1, 2.0, nx, QuadratureRule::Trapezoid)?;
    let (c, d) = spec.im_range;
    let y = GridAxis::new("im", c, d, ny, QuadratureRule::Trapezoid)?;
    Ok(build_unchecked(&empty, &x, &y, kernel).count().count.max(COUNT_FLOOR))
}

fn argmax(nodes: &[f64], v: &[f64]) -> f64 {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    nodes[best]
}

/// Argmax of the `x` and `y` marginals of the zero density.
pub fn locate_zero(spec: &ZetaRegionSpec, x: &GridAxis, y: &GridAxis, kernel: DeltaKernel) -> Result<ZeroLocation> {
    let t = build_zeta_ftn(spec, x, y, kernel)?;
    let count = t.count().count;
    let baseline = empty_box_baseline(spec, x.n_points(), y.n_points(), kernel)?;
    if !(count > PEAK_FACTOR * baseline) {
        return Err(Error::NoPeak);
    }
    let (fx, fy) = t.marginals();
    Ok(ZeroLocation {
        re: argmax(x.nodes(), &fx),
        im: argmax(y.nodes(), &fy),
        count,
        baseline,
    })
}
