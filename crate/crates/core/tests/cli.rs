use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ftnilo::cli::{emit_marginal_csv, load};
use ftnilo::circuit::{inversion_chain, tensorize, TensorMode};
use ftnilo::engine::{contract, Query};
use ftnilo::grid::{GridAxis, QuadratureRule};
use ftnilo::kernels::DeltaKernel;
use serde_json::Value;

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn ftnilo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftnilo"))
        .args(args)
        .env_remove("FTNILO_THREADS")
        .output()
        .expect("binary runs")
}

fn run_file(problem: &Path, out: &Path, extra: &[&str]) -> (i32, Option<Value>, String) {
    let mut args = vec!["run", problem.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = ftnilo(&args);
    let json = std::fs::read_to_string(out)
        .ok()
        .map(|s| serde_json::from_str(&s).expect("result is JSON"));
    (o.status.code().expect("exited normally"), json, String::from_utf8_lossy(&o.stderr).into())
}

fn run_value(problem: &Value, dir: &Path, name: &str) -> (i32, Option<Value>, String) {
    let p = dir.join(format!("{name}.json"));
    std::fs::write(&p, serde_json::to_string_pretty(problem).unwrap()).unwrap();
    run_file(&p, &dir.join(format!("{name}.result.json")), &[])
}

fn read_csv(path: &str) -> Vec<(f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect()
}

fn local_maxima(rows: &[(f64, f64)]) -> Vec<f64> {
    let peak = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    (1..rows.len() - 1)
        .filter(|&i| rows[i].1 > rows[i - 1].1 && rows[i].1 >= rows[i + 1].1 && rows[i].1 > 0.1 * peak)
        .map(|i| rows[i].0)
        .collect()
}

#[test]
fn invert_pow2_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("result.json");
    let (code, r, _) = run_file(&problems().join("invert_pow2.json"), &out, &[]);
    assert_eq!(code, 0);
    let r = r.unwrap();
    assert_eq!(r["status"], "unique");
    let x = r["solution"]["values"][0].as_f64().unwrap();
    assert!((x - 3.0).abs() < 0.005, "{x}");
    let csv = r["csv"][0].as_str().unwrap();
    assert!(csv.ends_with("result.x.csv"));
    let maxima = local_maxima(&read_csv(csv));
    assert_eq!(maxima.len(), 1, "{maxima:?}");
    assert!((maxima[0] - 3.0).abs() < 0.02);
}

#[test]
fn unknown_variable_is_a_validation_error() {
    let o = ftnilo(&["run", problems().join("bad.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`z`"), "{err}");
    assert!(err.contains("bad.json:6:"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn no_solution_is_an_answer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let (code, r, _) = run_file(&problems().join("count_x2_neg.json"), &out, &[]);
    assert_eq!(code, 0);
    let r = r.unwrap();
    assert_eq!(r["status"], "no_solution");
    assert!(r["ftnilo_number"]["raw"].as_f64().unwrap() <= 0.1);
}

fn square(target: f64) -> Value {
    serde_json::json!({
        "schema_version": 1,
        "task": "count",
        "variables": [{ "name": "x", "lo": -3, "hi": 3, "points": 601 }],
        "signals": [{ "name": "r" }],
        "operators": [{ "name": "F", "reads": "x", "transfers": [{ "signal": "r", "expr": "x^2" }] }],
        "outputs": ["r"],
        "target": [target],
        "marginals": ["x"]
    })
}

#[test]
fn square_marginal_csv_has_two_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r, _) = run_value(&square(4.0), dir.path(), "sq");
    assert_eq!(code, 0);
    let r = r.unwrap();
    assert_eq!(r["status"], "counted");
    assert_eq!(r["ftnilo_number"]["rounded"], 2);
    let maxima = local_maxima(&read_csv(r["csv"][0].as_str().unwrap()));
    assert_eq!(maxima.len(), 2, "{maxima:?}");
    assert!((maxima[0] + 2.0).abs() < 0.02 && (maxima[1] - 2.0).abs() < 0.02);
}

#[test]
fn csv_format() {
    let spec = inversion_chain(&["x"], &["2^x"]).unwrap();
    let axis = GridAxis::new("x", 0.0, 5.0, 11, QuadratureRule::Trapezoid).unwrap();
    let t = tensorize(&spec, &[axis], DeltaKernel::gaussian(0.5).unwrap(), TensorMode::Composed)
        .unwrap();
    let r = contract(&t, &Query::project(&t, &[8.0]).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    emit_marginal_csv(&r.marginals, "x", &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,density");
    assert_eq!(lines.len(), 12);
    assert!(lines[7].starts_with("3,"), "{}", lines[7]);
    for l in &lines[1..] {
        let v = l.split_once(',').unwrap().1;
        let digits = v.trim_start_matches('-').chars().take_while(|c| *c != 'e').filter(char::is_ascii_digit);
        assert!(digits.count() <= 12, "{v}");
    }
    let e = emit_marginal_csv(&r.marginals, "y", &p).unwrap_err();
    assert_eq!(e.name(), "MissingMarginal");
}

#[test]
fn marginal_for_unknown_variable_is_rejected() {
    let mut p = square(4.0);
    p["marginals"] = serde_json::json!(["w"]);
    let dir = tempfile::tempdir().unwrap();
    let (code, r, err) = run_value(&p, dir.path(), "m");
    assert_eq!(code, 2);
    assert!(r.is_none());
    assert!(err.contains("`w`"), "{err}");
}

#[test]
fn numeric_failure_exits_3_with_the_error_name() {
    let mut p: Value = serde_json::from_str(
        &std::fs::read_to_string(problems().join("optimize_constrained.json")).unwrap(),
    )
    .unwrap();
    p["operators"][1]["gate"]["bound"] = serde_json::json!(-10.0);
    let dir = tempfile::tempdir().unwrap();
    let (code, r, err) = run_value(&p, dir.path(), "gated");
    assert_eq!(code, 3);
    assert!(r.is_none());
    assert!(err.contains("InfeasibleBox"), "{err}");
}

#[test]
fn results_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["invert_pow2", "roots_cubic", "optimize_constrained"] {
        let problem = problems().join(format!("{name}.json"));
        let mut outs = Vec::new();
        for (k, threads) in ["1", "4", "4"].iter().enumerate() {
            let out = dir.path().join(format!("{name}.{k}.json"));
            let (code, _, _) = run_file(&problem, &out, &["--threads", threads]);
            assert_eq!(code, 0);
            let text = std::fs::read_to_string(&out).unwrap();
            outs.push(text.replace(&format!(".{k}."), "."));
        }
        assert_eq!(outs[0], outs[1], "{name}");
        assert_eq!(outs[1], outs[2], "{name}");
    }
}

#[test]
fn scale_flags_are_echoed_and_applied() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let args = ["--grid-scale", "2", "--kernel-scale", "1.5"];
    let (code, r, _) = run_file(&problems().join("invert_pow2.json"), &out, &args);
    assert_eq!(code, 0);
    let c = &r.unwrap()["config"];
    assert_eq!(c["variables"][0]["points"], 1002);
    assert_eq!(c["grid_scale"], 2.0);
    let w = c["kernel"]["width"].as_f64().unwrap();
    assert!((w - 1.5 * 3.0 * 5.0 / 1001.0).abs() < 1e-12, "{w}");
    let (code, _, _) = run_file(&problems().join("invert_pow2.json"), &out, &["--grid-scale", "0"]);
    assert_eq!(code, 2);
}

#[test]
fn threads_fall_back_to_the_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_ftnilo"))
        .args(["run", problems().join("invert_pow2.json").to_str().unwrap()])
        .env("FTNILO_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn deletions(v: &Value, path: Vec<String>, out: &mut Vec<(Vec<String>, Value)>, root: &Value) {
    match v {
        Value::Object(m) => {
            for k in m.keys() {
                let mut p = path.clone();
                p.push(k.clone());
                let mut copy = root.clone();
                remove(&mut copy, &p);
                out.push((p.clone(), copy));
                deletions(&m[k], p, out, root);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                let mut p = path.clone();
                p.push(i.to_string());
                deletions(x, p, out, root);
            }
        }
        _ => {}
    }
}

fn remove(v: &mut Value, path: &[String]) {
    let (last, parents) = path.split_last().unwrap();
    let mut cur = v;
    for p in parents {
        cur = match cur {
            Value::Object(m) => m.get_mut(p).unwrap(),
            Value::Array(a) => &mut a[p.parse::<usize>().unwrap()],
            _ => unreachable!(),
        };
    }
    cur.as_object_mut().unwrap().remove(last);
}

/// Fields whose absence must be rejected, by problem file.
fn required(name: &str, path: &[String]) -> bool {
    let last = path.last().unwrap().as_str();
    let top = path.len() == 1;
    match last {
        "schema_version" | "task" => top,
        "name" | "signal" | "expr" | "bound" | "kind" => !top,
        "target" => top && name != "optimize_constrained",
        "min_separation" => top && name == "roots_cubic",
        "riemann" | "series" | "trunc_n" | "re_range" | "im_range" => name == "riemann_locate",
        "lo" | "hi" | "points" => path[0] == "variables",
        "variables" | "operators" => top && name != "riemann_locate",
        "outputs" => top && !matches!(name, "riemann_locate" | "optimize_constrained"),
        _ => false,
    }
}

#[test]
fn field_deletion_fuzz_never_crashes() {
    for name in ["invert_pow2", "roots_cubic", "optimize_constrained", "count_x2_neg", "riemann_locate"] {
        let text = std::fs::read_to_string(problems().join(format!("{name}.json"))).unwrap();
        let root: Value = serde_json::from_str(&text).unwrap();
        let mut cases = Vec::new();
        deletions(&root, Vec::new(), &mut cases, &root);
        assert!(cases.len() > 5);
        for (path, doc) in cases {
            let text = serde_json::to_string_pretty(&doc).unwrap();
            let r = std::panic::catch_unwind(|| load(&text, 1.0, 1.0).map(|_| ()));
            let r = r.unwrap_or_else(|_| panic!("{name}: load panicked without {path:?}"));
            if required(name, &path) {
                let e = r.expect_err(&format!("{name}: accepted without {path:?}"));
                assert!(e.line >= 1 && e.column >= 1);
            }
        }
    }
}

#[test]
fn field_deletion_exit_codes() {
    let text = std::fs::read_to_string(problems().join("invert_pow2.json")).unwrap();
    let root: Value = serde_json::from_str(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for key in ["schema_version", "task", "variables", "operators", "outputs", "target"] {
        let mut doc = root.clone();
        doc.as_object_mut().unwrap().remove(key);
        let (code, r, err) = run_value(&doc, dir.path(), key);
        assert_eq!(code, 2, "without {key}: {err}");
        assert!(r.is_none());
    }
}
