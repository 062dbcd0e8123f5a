use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn irr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irr"))
        .args(args)
        .env("IRR_THREADS", "1")
        .output()
        .expect("irr runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn v_flow(dir: &Path, tau: &str) -> PathBuf {
    let out = path(dir, "v.json");
    let o = irr(&[
        "construct", "--v-flow", "--distance", "1", "--tau", tau, "--horizon", "2",
        "--epsilon", "0.05", "-o", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn construct_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let flow = path(dir.path(), "sq.json");
    let o = irr(&["construct", "--square-to-dirac", "--levels", "2", "-o", s(&flow)]);
    assert_eq!(code(&o), 0);
    let manifest = read_json(&path(dir.path(), "sq.json.manifest.json"));
    assert_eq!(manifest["command"], "construct");
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));

    let o = irr(&["evaluate", s(&flow)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("a,b,P,E,I,boundary_norm_sq,total"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row.len(), 7);
    assert!((row[4] - row[2] - row[3]).abs() < 1e-12 * row[4].abs());
    assert!(row[3] > 0.0 && row[5] > 0.0);

    let o = irr(&["verify", s(&flow)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn broken_kirchhoff_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let flow = v_flow(dir.path(), "1.5");
    let mut j = read_json(&flow);
    j["edges"][2]["flux"] = Value::from(0.75);
    let bad = path(dir.path(), "bad.json");
    std::fs::write(&bad, serde_json::to_string(&j).unwrap()).unwrap();
    let o = irr(&["verify", s(&bad)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn optimized_v_passes_minimizer_checks() {
    let dir = tempfile::tempdir().unwrap();
    let flow = v_flow(dir.path(), "0.5");
    let opt = path(dir.path(), "opt.json");
    let o = irr(&[
        "optimize", s(&flow), "--fix-boundary", "--fix-root", "--no-boundary-term",
        "--max-iters", "5000", "--grad-tol", "1e-9", "-o", s(&opt),
    ]);
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = irr(&["verify", s(&opt), "--minimizer"]);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(code(&o), 0, "{report}");
    assert_eq!(report["ok"], true);
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let junk = path(dir.path(), "junk.json");
    std::fs::write(&junk, "{\"nodes\": [").unwrap();
    assert_eq!(code(&irr(&["evaluate", s(&junk)])), 1);
    assert_eq!(code(&irr(&["evaluate", s(&path(dir.path(), "missing.json"))])), 1);
    assert_eq!(code(&irr(&["construct", "--levels", "2", "--v-flow", "--square-to-dirac"])), 1);
}

#[test]
fn optimize_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let flow = path(dir.path(), "sq.json");
    assert_eq!(code(&irr(&["construct", "--square-to-dirac", "--levels", "1", "-o", s(&flow)])), 0);
    let run = |name: &str| {
        let out = path(dir.path(), name);
        let o = irr(&[
            "optimize", s(&flow), "--topology", "--seed", "7", "--max-iters", "200", "-o", s(&out),
        ]);
        assert!(matches!(code(&o), 0 | 3));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}
