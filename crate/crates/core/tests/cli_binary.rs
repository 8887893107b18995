//! The installed binary: exit statuses, determinism and the thread cap.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kropina-nav"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

const FLAT: &str = r#"{"name": "flat", "dim": 2, "builtin": {"flat_constant_form": {"covector": [-1, 0]}}}"#;

#[test]
fn connect_exit_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "flat.json", FLAT);
    let ok = write(dir.path(), "ok.json", r#"{"x0": [0, 0], "x1": [1, 0]}"#);
    let bad = write(dir.path(), "bad.json", r#"{"x0": [0, 0], "x1": [0, 1]}"#);
    let out = dir.path().to_string_lossy().into_owned();

    let o = run(&["connect", "--manifold", &m, "--problem", &ok, "--out", &out, "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((report["result"]["length"].as_f64().unwrap() - 0.5).abs() < 1e-8);

    let o = run(&["connect", "--manifold", &m, "--problem", &bad, "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("NoAdmissibleSeed"));
}

#[test]
fn usage_errors_name_the_operation() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "flat.json", FLAT);
    let typo = write(dir.path(), "p.json", r#"{"x0": [0, 0], "x_1": [1, 0]}"#);
    let o = run(&["connect", "--manifold", &m, "--problem", &typo]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cli::problem") && err.contains("x_1"), "{err}");
    assert_eq!(run(&["orbit"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "flat.json", FLAT);
    let p = write(dir.path(), "p.json", r#"{"x0": [0, 0], "x1": [1, 0.2]}"#);
    let go = |threads: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = bin()
            .args(["connect", "--manifold", &m, "--problem", &p, "--json", "--seed", "7", "--out"])
            .arg(&out)
            .env("KROPINA_NAV_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        o.stdout
    };
    let a = go("1", "a");
    let b = go("4", "b");
    assert_eq!(a, b);
    let names = |sub: &str| {
        let mut v: Vec<String> = std::fs::read_dir(dir.path().join(sub)).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        v.sort();
        v
    };
    assert_eq!(names("a"), names("b"));
    assert!(names("a").iter().all(|n| n.starts_with("connect_flat_")));
}

#[test]
fn katok_row_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["katok", "--eps", "0.75", "--out", &dir.path().to_string_lossy()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    let row: Vec<f64> = text.lines().next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(row.len(), 5);
    assert_eq!(row[0], 0.75);
    assert!((row[1] - 4.18879).abs() < 1e-5 && (row[2] - 12.56637).abs() < 1e-5);
    assert!((row[3] - row[1]).abs() < 1e-3 && row[4] < 1e-3);
}

#[test]
fn reach_on_heisenberg_is_structural() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "h.json", r#"{"name": "heisenberg", "dim": 3, "builtin": "heisenberg"}"#);
    let p = write(dir.path(), "p.json", r#"{"box": {"lower": [-0.3, -0.3, -0.3], "upper": [0.3, 0.3, 0.3]}, "propagate": {"h": 0.1}}"#);
    let o = run(&["reach", "--manifold", &m, "--problem", &p, "--out", &dir.path().to_string_lossy(), "--json"]);
    assert_eq!(o.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["result"]["reached"], report["result"]["nodes"]);
    assert_eq!(report["result"]["boundary"]["empty"], true);
}
