use std::time::Instant;

use ftnilo::kernels::DeltaKernel;
use ftnilo::riemann::{
    build_zeta_ftn, count_zeros_box, empty_box_baseline, locate_zero, truncated_series, zeta_axes,
    Series, Topology, ZetaRegionSpec,
};
use num_complex::Complex64;

/// `Σ_{n≤N} n (n+1)^{-s} − (n − s) n^{-s}` in complex arithmetic.
fn strip_oracle(n_max: usize, s: Complex64) -> Complex64 {
    let mut z = Complex64::new(0.0, 0.0);
    for n in 1..=n_max {
        let nf = n as f64;
        z += nf * Complex64::new(nf + 1.0, 0.0).powc(-s) - (nf - s) * Complex64::new(nf, 0.0).powc(-s);
    }
    z
}

fn newton_zero(n_max: usize, start: Complex64) -> Complex64 {
    let mut s = start;
    for _ in 0..50 {
        let f = strip_oracle(n_max, s);
        let h = Complex64::new(1e-6, 0.0);
        let df = (strip_oracle(n_max, s + h) - strip_oracle(n_max, s - h)) / (2.0 * h);
        let step = f / df;
        s -= step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    s
}

fn strip(n: usize, im: (f64, f64)) -> ZetaRegionSpec {
    ZetaRegionSpec {
        series: Series::Strip,
        trunc_n: n,
        re_range: (0.05, 0.95),
        im_range: im,
        exclusion_band: 0.0,
        topology: Topology::Linear,
    }
}

fn kernel() -> DeltaKernel {
    DeltaKernel::gaussian(0.1).unwrap()
}

#[test]
fn partial_zeta_two() {
    let want: f64 = (1..=50).map(|n| 1.0 / (n as f64 * n as f64)).sum();
    let (z, zp) = truncated_series(Series::ReGt1, 50, 2.0, 0.0);
    assert!((z - want).abs() < 1e-12 && zp == 0.0);
    assert!((z - 1.6251).abs() < 1e-4);
}

#[test]
fn accumulation_matches_series_and_donut() {
    let mut spec = strip(60, (10.0, 20.0));
    let (x, y) = zeta_axes(&spec, 21, 21).unwrap();
    let lin = build_zeta_ftn(&spec, &x, &y, kernel()).unwrap();
    spec.topology = Topology::Donut;
    let donut = build_zeta_ftn(&spec, &x, &y, kernel()).unwrap();
    for i in 0..x.n_points() {
        for j in 0..y.n_points() {
            let direct = truncated_series(Series::Strip, 60, x.nodes()[i], y.nodes()[j]);
            assert_eq!(lin.accumulated(i, j), direct);
            assert_eq!(donut.accumulated(i, j), direct);
        }
    }
}

#[test]
fn first_zero_near_critical_line() {
    let oracle = newton_zero(200, Complex64::new(0.5, 14.13));
    let (a, _) = truncated_series(Series::Strip, 200, oracle.re, oracle.im);
    let spec = strip(200, (oracle.im - 0.5, oracle.im + 0.5));
    let (x, y) = zeta_axes(&spec, 41, 41).unwrap();
    let t = build_zeta_ftn(&spec, &x, &y, kernel()).unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..x.n_points() {
        for j in 0..y.n_points() {
            let (p, q) = t.accumulated(i, j);
            let m = p.hypot(q);
            if m < best.0 {
                best = (m, x.nodes()[i], y.nodes()[j]);
            }
        }
    }
    assert!(a.abs() < 1e-8);
    assert!((best.1 - oracle.re).abs() < 0.05 && (best.2 - oracle.im).abs() < 0.05, "{best:?} vs {oracle}");
}

#[test]
fn zero_free_region_has_no_peak() {
    let spec = ZetaRegionSpec {
        series: Series::ReGt1,
        trunc_n: 200,
        re_range: (1.1, 2.0),
        im_range: (0.0, 30.0),
        exclusion_band: 0.0,
        topology: Topology::Linear,
    };
    let (x, y) = zeta_axes(&spec, 91, 301).unwrap();
    assert!(count_zeros_box(&spec, &x, &y, kernel()).unwrap().count <= 0.1);
    assert_eq!(locate_zero(&spec, &x, &y, kernel()).unwrap_err().name(), "NoPeak");
}

#[test]
fn locate_two_zeros_and_band() {
    for (im, start) in [((13.0, 15.0), 14.13), ((20.0, 22.0), 21.02)] {
        let oracle = newton_zero(400, Complex64::new(0.5, start));
        let spec = strip(400, im);
        let (x, y) = zeta_axes(&spec, 301, 301).unwrap();
        let t0 = Instant::now();
        let z = locate_zero(&spec, &x, &y, kernel()).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        eprintln!("{im:?}: located {z:?}, oracle {oracle}, {secs:.2}s");
        assert!((z.re - oracle.re).abs() <= 0.05 && (z.im - oracle.im).abs() <= 0.10);
        assert!((z.re - 0.5).abs() <= 0.05);
        let mut banded = spec.clone();
        banded.exclusion_band = 0.1;
        let c = count_zeros_box(&banded, &x, &y, kernel()).unwrap().count;
        let base = empty_box_baseline(&spec, x.n_points(), y.n_points(), kernel()).unwrap();
        eprintln!("band count {c:e}, baseline {base:e}, unbanded {:e}", z.count);
        assert!(c < 2.0 * base);
    }
}

#[test]
fn truncation_stability() {
    for (im, start) in [((13.0, 15.0), 14.13), ((20.0, 22.0), 21.02)] {
        let mut out = Vec::new();
        for n in [800, 1600] {
            let spec = strip(n, im);
            let (x, y) = zeta_axes(&spec, 151, 151).unwrap();
            out.push(locate_zero(&spec, &x, &y, kernel()).unwrap());
        }
        eprintln!("{start}: {:?}", out);
        assert!((out[0].re - out[1].re).abs() < 0.05 && (out[0].im - out[1].im).abs() < 0.05);
    }
}
