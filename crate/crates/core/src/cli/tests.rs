use super::*;

fn write_spec(dir: &Path, file: &str, text: &str) -> PathBuf {
    let p = dir.join(file);
    std::fs::write(&p, text).unwrap();
    p
}

fn manifold_file(dir: &Path, builtin: &str) -> PathBuf {
    let spec = builtin_spec(builtin).unwrap();
    write_spec(dir, &format!("{builtin}.json"), &serde_json::to_string(&spec).unwrap())
}

fn config(command: Command, manifold: Option<PathBuf>, problem: Option<PathBuf>, out: &Path) -> RunConfig {
    RunConfig { command, manifold, problem, out: out.to_path_buf(), eps: None, tol: None, seed: 0, json: false, verbosity: 0 }
}

#[test]
fn floats_have_seventeen_digits() {
    assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    assert_eq!(fmt_f64(f64::INFINITY), "inf");
    let x = 0.1 + 0.2;
    assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
}

#[test]
fn json_is_sorted_and_null_safe() {
    let v = json!({"b": 1, "a": [0.25, f64::NAN], "c": {"z": true, "y": "s"}});
    let s = to_json(&v);
    assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
    assert!(s.contains("[2.5000000000000000e-1, null]"));
    assert!(s.find("\"y\"").unwrap() < s.find("\"z\"").unwrap());
}

#[test]
fn problem_specs_are_strict_and_round_trip() {
    assert!(ProblemSpec::from_json(r#"{"x0": [0, 0], "tolerance": 1}"#).is_err());
    assert!(ProblemSpec::from_json(r#"{"tolerances": {"gradient": 1e-6, "bogus": 1}}"#).is_err());
    let p = ProblemSpec::from_json(
        r#"{"x0": [0, 0], "x1": [1, 0.1], "seed": "detour", "segments": 48,
            "tolerances": {"gradient": 1e-8}, "eps_schedule": [1, 0.5]}"#,
    )
    .unwrap();
    assert_eq!(p.tolerances.unwrap().endpoint, Tolerances::default().endpoint);
    assert_eq!(ProblemSpec::from_json(&p.to_json()).unwrap(), p);
    let q = ProblemSpec::from_json(r#"{"seed_loop": {"start": [0, 0.5], "shift": [1, 0]}, "homotopy": true}"#).unwrap();
    assert_eq!(ProblemSpec::from_json(&q.to_json()).unwrap(), q);
    let r = ProblemSpec::from_json(r#"{"seed": [[0, 0], [0.5, 0.5], [1, 0]]}"#).unwrap();
    assert!(matches!(r.seed, Some(SeedSpec::Polyline(_))));
    assert_eq!(ProblemSpec::from_json(&r.to_json()).unwrap(), r);
}

#[test]
fn fields_must_match_the_command() {
    let p = ProblemSpec { source: Some(vec![0.0, 0.0]), ..Default::default() };
    assert!(p.check_fields(Command::Reach).is_ok());
    let e = p.check_fields(Command::Connect).unwrap_err().to_string();
    assert!(e.contains("source") && e.contains("cli::problem"));
}

#[test]
fn eps_override_truncates_the_schedule() {
    let mut p = ProblemSpec::default();
    p.apply_overrides(Command::Connect, Some(0.1), Some(1e-11)).unwrap();
    assert_eq!(p.eps_schedule.as_deref().unwrap().last(), Some(&0.1));
    assert!(p.eps_schedule.as_deref().unwrap().windows(2).all(|w| w[1] < w[0]));
    assert_eq!(p.tolerances.unwrap().integrator, 1e-11);
    assert_eq!(p.homotopy, Some(true));
    assert!(ProblemSpec::default().apply_overrides(Command::Reach, Some(0.5), None).is_err());
}

#[test]
fn connect_flat_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifold_file(dir.path(), "flat_dx");
    let p = write_spec(dir.path(), "p.json", r#"{"x0": [0, 0], "x1": [1, 0]}"#);
    let out = dir.path().join("out");
    let a = run(&config(Command::Connect, Some(m.clone()), Some(p.clone()), &out)).unwrap();
    assert_eq!(a.exit_code, 0);
    assert!((a.report["result"]["length"].as_f64().unwrap() - 0.5).abs() < 1e-8);
    let stem = &a.artifacts.stem;
    assert!(stem.starts_with("connect_flat_dx_") && stem.len() == "connect_flat_dx_".len() + 12, "{stem}");
    let first = std::fs::read(&a.artifacts.report).unwrap();
    let b = run(&config(Command::Connect, Some(m), Some(p), &out)).unwrap();
    assert_eq!(b.artifacts.report, a.artifacts.report);
    assert_eq!(std::fs::read(&b.artifacts.report).unwrap(), first);
    // emitted problem spec reproduces the run
    let emitted = ProblemSpec::from_json(&std::fs::read_to_string(&a.artifacts.problem).unwrap()).unwrap();
    assert_eq!(emitted.x1, Some(vec![1.0, 0.0]));
    // trajectory with header
    let csv = std::fs::read_to_string(&a.artifacts.data).unwrap();
    assert!(csv.starts_with("s,x1,x2,"));
    assert!(csv.lines().count() > 2);
}

#[test]
fn flat_vertical_connection_is_structural() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifold_file(dir.path(), "flat_dx");
    let p = write_spec(dir.path(), "p.json", r#"{"x0": [0, 0], "x1": [0, 1]}"#);
    let o = run(&config(Command::Connect, Some(m), Some(p), dir.path())).unwrap();
    assert_eq!(o.exit_code, 3);
    assert_eq!(o.report["result"]["status"], "NoAdmissibleSeed");
    assert!(o.report["result"]["reason"].as_str().unwrap().contains("admissible"));
}

#[test]
fn closed_csv_repeats_the_first_row() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"name": "torus", "dim": 2, "builtin": {"flat_torus": {"covector": [-1, 0]}}}"#;
    let m = write_spec(dir.path(), "torus.json", spec);
    let p = write_spec(dir.path(), "p.json", r#"{"seed_loop": {"start": [0, 0.5], "shift": [1, 0], "samples": 16}}"#);
    let o = run(&config(Command::Closed, Some(m), Some(p), dir.path())).unwrap();
    assert_eq!(o.exit_code, 0, "{}", to_json(&o.report));
    let lines: Vec<&str> = o.csv.lines().collect();
    let tail = |l: &str| l.split_once(',').unwrap().1.to_string();
    assert_eq!(tail(lines[1]), tail(lines[lines.len() - 1]));
}

#[test]
fn reach_grid_is_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifold_file(dir.path(), "flat_dx");
    let p = write_spec(dir.path(), "p.json", r#"{"box": {"lower": [-0.3, -0.3], "upper": [0.3, 0.3]}, "propagate": {"h": 0.1}}"#);
    let o = run(&config(Command::Reach, Some(m), Some(p), dir.path())).unwrap();
    assert_eq!(o.exit_code, 0);
    let idx: Vec<(i64, i64)> = o
        .csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
        })
        .collect();
    assert_eq!(idx.len(), 49);
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(o.report["result"]["boundary"]["empty"], false);
}

#[test]
fn katok_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Command::Katok, None, None, dir.path());
    c.eps = Some(0.75);
    let o = run(&c).unwrap();
    assert_eq!(o.exit_code, 0);
    let row = &o.report["result"]["rows"][0];
    assert!((row["short"].as_f64().unwrap() - 4.18879).abs() < 1e-5);
    assert!((row["long"].as_f64().unwrap() - 12.56637).abs() < 1e-5);
    assert!(row["error"].as_f64().unwrap() < 1e-3);
    assert!(summary(&o).starts_with("7.5000000000000000e-1 4.18879"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(main_with_args(["kropina-nav", "fly"]), 1);
    assert_eq!(main_with_args(["kropina-nav", "connect", "--manifold", "/nonexistent/m.json"]), 1);
    assert_eq!(main_with_args(["kropina-nav", "reach"]), 1);
}
