//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the terminal.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ftnilo::circuit::{
    constrained_quadratic_chain, cos_sin_chain, inversion_chain, quadratic_chain, tensorize,
    tensorize_discrete, tensorize_hybrid, CircuitSpec, FieldTensor, LogicalOperator, Signal,
    TensorMode,
};
use ftnilo::engine::{contract, Query, Side};
use ftnilo::grid::{GridAxis, QuadratureRule};
use ftnilo::kernels::DeltaKernel;
use ftnilo::riemann::{
    build_zeta_ftn, count_zeros_box, empty_box_baseline, locate_zero, zeta_axes, Series, Topology,
    ZetaRegionSpec,
};
use ftnilo::solve::{
    forward_eval, gauge_pair_check, invert_all, invert_unique, optimize, renormalized_ratio,
    OptimizeMode, TauSchedule,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn one_var(term: &str, lo: f64, hi: f64, points: usize, mode: TensorMode) -> (FieldTensor, f64, f64) {
    let spec = inversion_chain(&["x"], &[term]).unwrap();
    let axis = GridAxis::new("x", lo, hi, points, QuadratureRule::Trapezoid).unwrap();
    let h = axis.cell_width();
    let k = DeltaKernel::default_for_cell(h).unwrap();
    (tensorize(&spec, &[axis], k, mode).unwrap(), h, k.width)
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    assert!(fa * f(b) < 0.0, "bisection needs a sign change");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (f(m) < 0.0) == (fa < 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

struct Monotone {
    term: &'static str,
    f: fn(f64) -> f64,
    y: f64,
    lo: f64,
    hi: f64,
}

const MONOTONE: [Monotone; 3] = [
    Monotone { term: "2^x", f: |x| 2f64.powf(x), y: 8.0, lo: 0.0, hi: 5.0 },
    Monotone { term: "x^3 + x", f: |x| x * x * x + x, y: 10.0, lo: -3.0, hi: 3.0 },
    Monotone { term: "exp(x)", f: f64::exp, y: 1.0, lo: -2.0, hi: 2.0 },
];

fn c1_unique_inversion() -> Check {
    let mut notes = Vec::new();
    for m in &MONOTONE {
        let start = Instant::now();
        let (t, h, w) = one_var(m.term, m.lo, m.hi, 501, TensorMode::Grid);
        let s = invert_unique(&t, &[m.y]).map_err(|e| format!("{}: {e}", m.term))?;
        let secs = start.elapsed().as_secs_f64();
        let root = bisect(|x| (m.f)(x) - m.y, m.lo, m.hi);
        let err = (s.values[0] - root).abs();
        ensure!(err <= w + h, "{}: X̂ {} vs {root}, error {err:.2e} > {:.2e}", m.term, s.values[0], w + h);
        ensure!(secs < 1.0, "{}: {secs:.2}s", m.term);
        notes.push(format!("{} err {err:.1e} {secs:.3}s", m.term));
    }
    Ok(notes.join("; "))
}

fn count(term: &str, lo: f64, hi: f64, y: f64) -> Result<(f64, f64), String> {
    let start = Instant::now();
    let (t, _, _) = one_var(term, lo, hi, 501, TensorMode::Grid);
    let n = contract(&t, &Query::project(&t, &[y]).unwrap()).map_err(|e| e.to_string())?.total();
    Ok((n, start.elapsed().as_secs_f64()))
}

fn c2_checker() -> Check {
    let (two, s1) = count("x^2", -5.0, 5.0, 4.0)?;
    let (none, s2) = count("x^2", -5.0, 5.0, -1.0)?;
    let (five, s3) = count("sin(pi*x)", -2.5, 2.5, 0.0)?;
    ensure!((1.8..=2.2).contains(&two), "𝒩(x²=4) = {two}");
    ensure!(none <= 0.1, "𝒩(x²=-1) = {none}");
    ensure!((4.75..=5.25).contains(&five), "𝒩(sin πx=0) = {five}");
    let slowest = s1.max(s2).max(s3);
    ensure!(slowest < 1.0, "slowest {slowest:.2}s");
    Ok(format!("𝒩 = {two:.4}, {none:.1e}, {five:.4}; slowest {slowest:.3}s"))
}

fn c3_moments() -> Check {
    let (t, _, _) = one_var("x^2", -5.0, 5.0, 501, TensorMode::Grid);
    let r = contract(&t, &Query::project(&t, &[4.0]).unwrap()).map_err(|e| e.to_string())?;
    let m = &r.marginals[0];
    let (m0, m1, m2) = (m.moment(0), m.moment(1), m.moment(2));
    ensure!((1.9..=2.1).contains(&m0), "μ₀ = {m0}");
    ensure!(m1.abs() <= 0.05, "μ₁ = {m1}");
    ensure!((7.6..=8.4).contains(&m2), "μ₂ = {m2}");
    let parts = m.partial(0, 0.0, Side::Plus) + m.partial(0, 0.0, Side::Minus);
    ensure!((parts - m0).abs() <= 0.01 * m0, "μ₀⁺ + μ₀⁻ = {parts} vs {m0}");
    Ok(format!("μ = ({m0:.4}, {m1:.1e}, {m2:.4})"))
}

fn c4_protocol() -> Check {
    let p = |x: f64| (x - 1.0) * (x + 1.0) * (x - 2.5);
    let roots = [bisect(p, -2.0, 0.0), bisect(p, 0.0, 2.0), bisect(p, 2.0, 4.0)];
    let (t, _, _) = one_var("(x - 1) * (x + 1) * (x - 2.5)", -4.0, 4.0, 801, TensorMode::Grid);
    let r = invert_all(&t, &[0.0], 0.05).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = r.solutions.iter().map(|b| b.values[0]).collect();
    ensure!(xs.len() == 3, "brackets at {xs:?}");
    for (x, root) in xs.iter().zip(roots) {
        ensure!((x - root).abs() <= 0.02, "{x} vs {root}");
    }
    // roots 1 and 1 + δ, δ below the kernel width; the scale puts the dip
    // between them 1.5 widths deep and the fine grid resolves each peak
    let (delta, kw) = (0.02, 0.03);
    let spec = inversion_chain(&["x"], &[&format!("450 * (x - 1) * (x - 1 - {delta})")]).unwrap();
    let axis = GridAxis::new("x", 0.0, 2.0, 2001, QuadratureRule::Trapezoid).unwrap();
    let t = tensorize(&spec, &[axis], DeltaKernel::gaussian(kw).unwrap(), TensorMode::Composed).unwrap();
    let r = invert_all(&t, &[0.0], 0.05).map_err(|e| e.to_string())?;
    ensure!(r.solutions.len() == 1, "{} brackets for the merged pair", r.solutions.len());
    let b = &r.solutions[0];
    let [m0, m1, m2] = b.moments;
    let dev = (m2 - m1 * m1 / m0).abs() / m2.abs();
    ensure!(b.collapse_ratio.is_some(), "bracket not flagged as collapsed");
    ensure!(dev <= 0.02, "|μ₂ − μ₁²/μ₀| / μ₂ = {dev}");
    // coarea: 2·P(U > −1.5w) for U ~ N(0, w²)
    ensure!((m0 - 1.8664).abs() < 0.02, "merged μ₀ = {m0}");
    ensure!((b.values[0] - 1.0 - 0.5 * delta).abs() <= 0.005, "merged root at {}", b.values[0]);
    Ok(format!(
        "roots {:?}; merged pair (δ = {delta}, w = {kw}) μ₀ {m0:.3}, deviation {dev:.1e}",
        xs.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>()
    ))
}

fn c5_renormalized() -> Check {
    let (t, _, _) = one_var("max(0, x)", -2.0, 2.0, 401, TensorMode::Grid);
    let whole = renormalized_ratio(&t, &[0.0], &[(-2.0, 0.0)], &[(-1.0, 0.0)]).map_err(|e| e.to_string())?;
    let mixed = renormalized_ratio(&t, &[0.0], &[(-1.0, 1.0)], &[(-1.0, 0.0)]).map_err(|e| e.to_string())?;
    ensure!((1.8..=2.2).contains(&whole), "[−2,0]/[−1,0] = {whole}");
    ensure!(mixed < 1.8, "[−1,1]/[−1,0] = {mixed}");
    Ok(format!("ratios {whole:.4}, {mixed:.4}"))
}

fn boxes(n: usize, lo: f64, hi: f64, g: usize) -> Vec<GridAxis> {
    (0..n)
        .map(|i| GridAxis::new(format!("x{i}"), lo, hi, g, QuadratureRule::Trapezoid).unwrap())
        .collect()
}

fn c6_optimization() -> Check {
    // (a) convex chain
    let spec = quadratic_chain(&[1.0; 3], &[0.5; 2], 1.0).unwrap();
    let ax = boxes(3, -3.0, 3.0, 61);
    let h = ax[0].cell_width();
    let t = tensorize(&spec, &ax, DeltaKernel::default_for_cell(h).unwrap(), TensorMode::Composed).unwrap();
    let s = optimize(&t, &TauSchedule::default(), OptimizeMode::Unique).map_err(|e| e.to_string())?;
    ensure!(s.values.iter().all(|v| v.abs() <= h), "(a) X̂ = {:?}", s.values);
    let objectives: Vec<f64> = s.trajectory.iter().map(|p| p.objective).collect();
    ensure!(objectives.windows(2).all(|w| w[1] <= w[0] + 1e-6), "(a) f(X̂(τ)) = {objectives:?}");

    // (b) gate a·x < W
    let spec = constrained_quadratic_chain(&[1.0, 1.0], &[0.5], &[1.0, 1.0], -1.0, 1.0).unwrap();
    let ax = boxes(2, -3.0, 3.0, 201);
    let hb = ax[0].cell_width();
    let t = tensorize(&spec, &ax, DeltaKernel::default_for_cell(hb).unwrap(), TensorMode::Composed).unwrap();
    let sb = optimize(&t, &TauSchedule::default(), OptimizeMode::Unique).map_err(|e| e.to_string())?;
    ensure!(sb.values.iter().all(|v| (v + 0.5).abs() <= hb), "(b) X̂ = {:?}", sb.values);
    ensure!(sb.feasible, "(b) infeasible X̂ = {:?}", sb.values);

    // (c) cos-sin against an exhaustive scan
    let start = Instant::now();
    let pi = std::f64::consts::PI;
    let spec = cos_sin_chain(2, 1.0).unwrap();
    let ax = boxes(2, -pi, pi, 201);
    let hc = ax[0].cell_width();
    let t = tensorize(&spec, &ax, DeltaKernel::default_for_cell(hc).unwrap(), TensorMode::Composed).unwrap();
    let sc = optimize(&t, &TauSchedule::default(), OptimizeMode::Multimodal).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let nodes = ax[0].nodes();
    let f = |a: f64, b: f64| a.sin() + (a.sin() * b).cos() * b.sin();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &a in nodes {
        for &b in nodes {
            let v = f(a, b);
            if v < best.0 {
                best = (v, a, b);
            }
        }
    }
    ensure!(
        (sc.values[0] - best.1).abs() <= hc + 1e-12 && (sc.values[1] - best.2).abs() <= hc + 1e-12,
        "(c) X̂ = {:?}, scan argmin ({}, {})",
        sc.values,
        best.1,
        best.2
    );
    ensure!(secs < 30.0, "(c) {secs:.1}s");
    Ok(format!(
        "(a) f {:.2e} → {:.2e}; (b) X̂ ({:.3}, {:.3}); (c) X̂ ({:.3}, {:.3}) vs ({:.3}, {:.3}) in {secs:.2}s",
        objectives[0],
        objectives[objectives.len() - 1],
        sb.values[0],
        sb.values[1],
        sc.values[0],
        sc.values[1],
        best.1,
        best.2
    ))
}

fn c7_forward() -> Check {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for m in &MONOTONE {
        let (t, _, w) = one_var(m.term, m.lo, m.hi, 501, TensorMode::Grid);
        for _ in 0..20 {
            let x = rng.gen_range(m.lo..=m.hi);
            let got = forward_eval(&t, &[x]).map_err(|e| e.to_string())?[0];
            let err = (got - (m.f)(x)).abs();
            ensure!(err <= 2.0 * w, "{} at {x}: {got} vs {}", m.term, (m.f)(x));
            worst = worst.max(err / (2.0 * w));
        }
    }
    Ok(format!("worst error {:.1}% of 2w", 100.0 * worst))
}

fn c8_gauge() -> Check {
    let (t, _, _) = one_var("2^x", 0.0, 5.0, 501, TensorMode::Grid);
    let gauge = t.default_fourier("r").map_err(|e| e.to_string())?;
    let g = gauge_pair_check(&t, &[8.0], "r", gauge).map_err(|e| e.to_string())?;
    ensure!(g.deviation <= 0.01, "relative change {}", g.deviation);
    Ok(format!("X̂ {:.5} → {:.5}, relative change {:.1e}", g.plain[0], g.gauged[0], g.deviation))
}

fn c9_discrete() -> Check {
    let spec = CircuitSpec::new(&["x0", "x1", "x2"])
        .signal(Signal::discrete("s", Some(0.0), 0, 31))
        .op(LogicalOperator::new("A").reads("x0").transfer("s", "x0").unwrap().factor("1 + x0").unwrap())
        .op(LogicalOperator::new("B").reads("x1").transfer("s", "s * x1 + 1").unwrap())
        .op(LogicalOperator::new("C")
            .reads("x2")
            .transfer("s", "mod(s + 2 * x2, 7)")
            .unwrap()
            .factor("3 - x2")
            .unwrap())
        .output("s");
    let ranges = [("x0", 0, 3), ("x1", 0, 3), ("x2", 0, 3)];
    let d = tensorize_discrete(&spec, &ranges).map_err(|e| e.to_string())?;
    let h = tensorize_hybrid(&spec, &[], &ranges, DeltaKernel::gaussian(0.5).unwrap()).map_err(|e| e.to_string())?;
    for y in 0..7i64 {
        let mut want = 0.0;
        for x0 in 0..=3i64 {
            for x1 in 0..=3i64 {
                for x2 in 0..=3i64 {
                    if (x0 * x1 + 1 + 2 * x2).rem_euclid(7) == y {
                        want += ((1 + x0) * (3 - x2)) as f64;
                    }
                }
            }
        }
        let q = Query::project(&d, &[y as f64]).unwrap();
        let rd = contract(&d, &q).map_err(|e| e.to_string())?;
        let rh = contract(&h, &q).map_err(|e| e.to_string())?;
        ensure!(rd.total() == want, "y = {y}: network {} vs nested sums {want}", rd.total());
        ensure!(rd == rh, "y = {y}: hybrid differs from discrete");
    }
    Ok("7 targets exact; hybrid identical".into())
}

fn c10_riemann() -> Check {
    let kernel = DeltaKernel::gaussian(0.1).unwrap();
    // (a)
    let spec = ZetaRegionSpec {
        series: Series::ReGt1,
        trunc_n: 50,
        re_range: (1.1, 2.0),
        im_range: (0.0, 1.0),
        exclusion_band: 0.0,
        topology: Topology::Linear,
    };
    let (x, y) = zeta_axes(&spec, 10, 11).unwrap();
    ensure!(x.nodes()[9] == 2.0 && y.nodes()[0] == 0.0, "no node at s = 2");
    let t = build_zeta_ftn(&spec, &x, &y, kernel).map_err(|e| e.to_string())?;
    let (z, zi) = t.accumulated(9, 0);
    let want: f64 = (1..=50).map(|n| 1.0 / (n * n) as f64).sum();
    ensure!((z - want).abs() <= 1e-12 && zi.abs() <= 1e-12, "(a) {z} vs {want}");

    // (b)
    let spec = ZetaRegionSpec { trunc_n: 200, im_range: (0.0, 30.0), ..spec };
    let (x, y) = zeta_axes(&spec, 301, 301).unwrap();
    let empty = count_zeros_box(&spec, &x, &y, kernel).map_err(|e| e.to_string())?.count;
    ensure!(empty <= 0.1, "(b) count {empty}");

    // (c)
    let start = Instant::now();
    let strip = ZetaRegionSpec {
        series: Series::Strip,
        trunc_n: 400,
        re_range: (0.05, 0.95),
        im_range: (13.0, 15.0),
        exclusion_band: 0.0,
        topology: Topology::Linear,
    };
    let oracle = strip_zero(400, Complex64::new(0.5, 14.13));
    let (x, y) = zeta_axes(&strip, 301, 301).unwrap();
    let loc = locate_zero(&strip, &x, &y, kernel).map_err(|e| e.to_string())?;
    let banded = ZetaRegionSpec { exclusion_band: 0.1, ..strip.clone() };
    let band = count_zeros_box(&banded, &x, &y, kernel).map_err(|e| e.to_string())?.count;
    let base = empty_box_baseline(&strip, x.n_points(), y.n_points(), kernel).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(
        (loc.re - oracle.re).abs() <= 0.05 && (loc.im - oracle.im).abs() <= 0.10,
        "(c) located ({}, {}) vs oracle {oracle}",
        loc.re,
        loc.im
    );
    ensure!(band < 2.0 * base, "(c) band count {band:e} vs baseline {base:e}");
    ensure!(secs < 120.0, "(c) {secs:.1}s");

    // (d)
    let donut = ZetaRegionSpec { topology: Topology::Donut, ..strip.clone() };
    let (x, y) = zeta_axes(&strip, 61, 61).unwrap();
    let a = build_zeta_ftn(&strip, &x, &y, kernel).map_err(|e| e.to_string())?;
    let b = build_zeta_ftn(&donut, &x, &y, kernel).map_err(|e| e.to_string())?;
    for i in 0..x.n_points() {
        for j in 0..y.n_points() {
            let (p, q) = (a.accumulated(i, j), b.accumulated(i, j));
            ensure!(
                p.0.to_bits() == q.0.to_bits() && p.1.to_bits() == q.1.to_bits(),
                "(d) node ({i}, {j}) differs"
            );
        }
    }
    Ok(format!(
        "(a) Δ {:.1e}; (b) {empty:.1e}; (c) ({:.3}, {:.3}) vs ({:.3}, {:.3}), band {band:.1e} < 2×{base:.0e} in {secs:.1}s; (d) identical",
        (z - want).abs(),
        loc.re,
        loc.im,
        oracle.re,
        oracle.im
    ))
}

/// Newton on the strip-form partial sum evaluated with complex powers.
fn strip_zero(n_max: usize, start: Complex64) -> Complex64 {
    let series = |s: Complex64| {
        (1..=n_max).fold(Complex64::new(0.0, 0.0), |z, n| {
            let nf = n as f64;
            z + nf * Complex64::new(nf + 1.0, 0.0).powc(-s) - (nf - s) * Complex64::new(nf, 0.0).powc(-s)
        })
    };
    let mut s = start;
    for _ in 0..50 {
        let h = Complex64::new(1e-6, 0.0);
        let step = series(s) / ((series(s + h) - series(s - h)) / (2.0 * h));
        s -= step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    s
}

fn c11_determinism() -> Check {
    let problems = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    for name in ["invert_pow2", "roots_cubic", "optimize_constrained", "count_x2_neg"] {
        let mut outs = Vec::new();
        for threads in ["1", "3"] {
            let out = dir.path().join(format!("{name}.result.json"));
            let status = Command::new(env!("CARGO_BIN_EXE_ftnilo"))
                .args(["run", problems.join(format!("{name}.json")).to_str().unwrap()])
                .args(["--out", out.to_str().unwrap(), "--threads", threads])
                .output()
                .map_err(|e| e.to_string())?
                .status;
            ensure!(status.success(), "{name}: {status}");
            outs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        ensure!(outs[0] == outs[1], "{name}: result files differ");
        checked.push(name);
    }
    Ok(format!("byte-identical: {}", checked.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("unique inversion", c1_unique_inversion),
        ("checker dichotomy", c2_checker),
        ("moments", c3_moments),
        ("protocol bracketing", c4_protocol),
        ("renormalized search", c5_renormalized),
        ("optimization", c6_optimization),
        ("forward transform", c7_forward),
        ("gauge invariance", c8_gauge),
        ("discrete recovery", c9_discrete),
        ("riemann desk scale", c10_riemann),
        ("determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
