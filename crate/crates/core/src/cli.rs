//! Command-line front end and report formatting.
//!
//! `kropina-nav <command> --manifold <file> [--problem <file>] [--out <dir>]
//! [--eps <float>] [--tol <float>] [--seed <int>] [--json]`
//!
//! Every run writes a JSON report, the effective problem spec and one CSV of
//! plot data into the output directory, named `{command}_{manifold}_{hash}`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::closed::{self, closed_epsilon_homotopy, closed_geodesic_in_class, LoopProblem};
use crate::connect::{
    default_eps_schedule, epsilon_homotopy, minimize_length, ConnectProblem, ConnectResult, ConnectStatus, SeedSpec,
    Tolerances,
};
use crate::error::{Error, Result};
use crate::geodesic_flow::DiscretePath;
use crate::manifold::{BuiltinGeometry, ManifoldModel, ManifoldSpec};
use crate::reachable::{self, GridBox, PropagateOptions};

/// Fixed 17-significant-digit rendering used by every report and table.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn csv_row(values: &[f64]) -> String {
    let mut s = values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

/// Pretty JSON with sorted keys and floats in [`fmt_f64`] form; non-finite
/// floats become `null`.
pub fn to_json(value: &Value) -> String {
    let mut out = String::new();
    write_json(&mut out, value, 0);
    out.push('\n');
    out
}

fn write_json(out: &mut String, value: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().unwrap_or(f64::NAN);
                out.push_str(&if x.is_finite() { fmt_f64(x) } else { "null".into() });
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // numeric vectors stay on one line
            if items.iter().all(|v| v.is_number() || v.is_null()) {
                out.push('[');
                for (k, v) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_json(out, v, depth);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (k, v) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_json(out, v, depth + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                pad(out, depth + 1);
                let _ = write!(out, "{}: ", Value::String((*key).clone()));
                write_json(out, &map[*key], depth + 1);
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Connecting geodesic between two points.
    Connect,
    /// Closed geodesic in the class of a seed loop.
    Closed,
    /// Admissible reachable set from a source.
    Reach,
    /// Katok family table on S^3.
    Katok,
    /// Killing-orbit closed geodesics and their perturbed lengths.
    Orbits,
    /// Non-integrability scan of omega.
    Scan,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Connect => "connect",
            Command::Closed => "closed",
            Command::Reach => "reach",
            Command::Katok => "katok",
            Command::Orbits => "orbits",
            Command::Scan => "scan",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kropina-nav", version, about = "Geodesics and reachable sets of Kropina metrics")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Manifold spec (JSON). Optional for `katok`, which always runs on S^3.
    #[arg(long)]
    pub manifold: Option<PathBuf>,
    /// Problem spec (JSON).
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// `katok`: a single table row. `connect`/`closed`: run the Randers continuation down to this epsilon.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Integrator tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the JSON report on stdout instead of a summary.
    #[arg(long)]
    pub json: bool,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Seed loop of a `closed` problem: explicit samples, or the straight loop
/// `start + s shift` (optionally wobbled) with `samples` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoopSeedSpec {
    Points {
        points: Vec<Vec<f64>>,
        shift: Vec<f64>,
    },
    Line {
        start: Vec<f64>,
        shift: Vec<f64>,
        #[serde(default = "default_loop_samples")]
        samples: usize,
    },
}

fn default_loop_samples() -> usize {
    32
}

impl LoopSeedSpec {
    pub fn to_path(&self) -> Result<DiscretePath> {
        let op = "cli::problem";
        let (points, shift) = match self {
            LoopSeedSpec::Points { points, shift } => {
                (points.iter().map(|p| DVector::from_column_slice(p)).collect(), DVector::from_column_slice(shift))
            }
            LoopSeedSpec::Line { start, shift, samples } => {
                if start.len() != shift.len() || *samples < 3 {
                    return Err(Error::Invalid { op, what: "line seed needs matching start/shift and >= 3 samples".into() });
                }
                let a = DVector::from_column_slice(start);
                let d = DVector::from_column_slice(shift);
                ((0..*samples).map(|k| &a + &d * (k as f64 / *samples as f64)).collect(), d)
            }
        };
        DiscretePath::closed_loop(points, shift)
    }
}

/// Problem file. Each command accepts only its own fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<SeedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_loop: Option<LoopSeedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    /// Run the Randers continuation before the Kropina stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homotopy: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<f64>>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<GridBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagate: Option<PropagateOptions>,
    /// Compute `I-` instead of `I+`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_axis: Option<usize>,
    /// Katok parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    /// Katok integrator tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Wind strengths for the perturbed Killing orbits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

const KATOK_EPS: [f64; 5] = [0.9, 0.75, 0.5, 0.1, 0.01];
const ORBIT_ALPHA: [f64; 3] = [0.25, 0.5, 0.75];

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid { op: "cli::problem", what: format!("problem spec: {e}") })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("problem specs serialize");
        s.push('\n');
        s
    }

    fn present(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut add = |name: &'static str, set: bool| {
            if set {
                out.push(name);
            }
        };
        add("x0", self.x0.is_some());
        add("x1", self.x1.is_some());
        add("seed", self.seed.is_some());
        add("seed_loop", self.seed_loop.is_some());
        add("segments", self.segments.is_some());
        add("tolerances", self.tolerances.is_some());
        add("homotopy", self.homotopy.is_some());
        add("eps_schedule", self.eps_schedule.is_some());
        add("source", self.source.is_some());
        add("box", self.bbox.is_some());
        add("propagate", self.propagate.is_some());
        add("backward", self.backward.is_some());
        add("per_axis", self.per_axis.is_some());
        add("eps", self.eps.is_some());
        add("tol", self.tol.is_some());
        add("alpha", self.alpha.is_some());
        out
    }

    /// Rejects fields that the command would silently ignore.
    pub fn check_fields(&self, command: Command) -> Result<()> {
        let allowed: &[&str] = match command {
            Command::Connect => &["x0", "x1", "seed", "segments", "tolerances", "homotopy", "eps_schedule"],
            Command::Closed => &["seed_loop", "segments", "tolerances", "homotopy", "eps_schedule"],
            Command::Reach => &["source", "box", "propagate", "backward"],
            Command::Katok => &["eps", "tol"],
            Command::Orbits => &["alpha"],
            Command::Scan => &["box", "per_axis"],
        };
        let bad: Vec<&str> = self.present().into_iter().filter(|f| !allowed.contains(f)).collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid {
                op: "cli::problem",
                what: format!("field(s) {} not used by '{}'", bad.join(", "), command.name()),
            })
        }
    }

    /// Folds `--eps` and `--tol` into the spec, so the emitted spec reproduces the run.
    pub fn apply_overrides(&mut self, command: Command, eps: Option<f64>, tol: Option<f64>) -> Result<()> {
        let op = "cli::run";
        match command {
            Command::Connect | Command::Closed => {
                if let Some(e) = eps {
                    if !(e > 0.0 && e <= 1.0) {
                        return Err(Error::OutOfRange { op, what: format!("--eps {e} must lie in (0, 1]") });
                    }
                    let base = self.eps_schedule.clone().unwrap_or_else(default_eps_schedule);
                    let mut schedule: Vec<f64> = base.into_iter().filter(|v| *v > e).collect();
                    schedule.push(e);
                    self.eps_schedule = Some(schedule);
                    self.homotopy = Some(true);
                }
                if let Some(t) = tol {
                    let mut tolerances = self.tolerances.unwrap_or_default();
                    tolerances.integrator = t;
                    self.tolerances = Some(tolerances);
                }
            }
            Command::Katok => {
                if let Some(e) = eps {
                    self.eps = Some(vec![e]);
                }
                if tol.is_some() {
                    self.tol = tol;
                }
            }
            _ => {
                if eps.is_some() || tol.is_some() {
                    return Err(Error::Invalid { op, what: format!("--eps/--tol do not apply to '{}'", command.name()) });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub manifold: Option<PathBuf>,
    pub problem: Option<PathBuf>,
    pub out: PathBuf,
    pub eps: Option<f64>,
    pub tol: Option<f64>,
    pub seed: u64,
    pub json: bool,
    pub verbosity: u8,
}

impl From<Args> for RunConfig {
    fn from(a: Args) -> Self {
        RunConfig {
            command: a.command,
            manifold: a.manifold,
            problem: a.problem,
            out: a.out,
            eps: a.eps,
            tol: a.tol,
            seed: a.seed,
            json: a.json,
            verbosity: a.verbose,
        }
    }
}

/// Files written by a run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub stem: String,
    pub report: PathBuf,
    pub problem: PathBuf,
    pub data: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub report: Value,
    pub artifacts: Artifacts,
    pub csv: String,
}

/// Exit status of an error that escaped a solver.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoAdmissibleSeed { .. } | Error::BoundaryEmpty { .. } | Error::HypothesisViolated { .. } => 3,
        Error::ConeExit { .. } | Error::StepUnderflow { .. } => 2,
        _ => 1,
    }
}

fn status_code(status: ConnectStatus) -> i32 {
    match status {
        ConnectStatus::Converged => 0,
        ConnectStatus::NoAdmissibleSeed => 3,
        _ => 2,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { op: "cli::run", path: path.display().to_string(), message: e.to_string() }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| io_err(path, e))
}

fn katok_manifold() -> ManifoldSpec {
    ManifoldSpec {
        name: "hopf_s3".into(),
        dim: 3,
        periodic: Vec::new(),
        builtin: Some(crate::manifold::BuiltinRef::Name("hopf_s3".into())),
        expressions: None,
        lower: None,
        upper: None,
    }
}

/// Lower-case alphanumerics and underscores only.
fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if s.is_empty() {
        "manifold".into()
    } else {
        s
    }
}

/// `{command}_{manifold}_{hash}` with the hash over everything that determines the run.
pub fn artifact_stem(command: Command, manifold: &ManifoldSpec, problem: &ProblemSpec, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(command.name().as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(manifold).expect("manifold specs serialize").as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(problem).expect("problem specs serialize").as_bytes());
    h.update(format!("\n{seed}").as_bytes());
    let digest = h.finalize();
    format!("{}_{}_{}", command.name(), slug(&manifold.name), &hex::encode(digest)[..12])
}

/// Parses and resolves everything, runs the command and writes the artifacts.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let op = "cli::run";
    // resolve all paths before any computation
    let manifold_path = config.manifold.as_deref().map(absolute).transpose()?;
    let problem_path = config.problem.as_deref().map(absolute).transpose()?;
    let out_dir = absolute(&config.out)?;

    let manifold_spec = match (&manifold_path, config.command) {
        (Some(p), _) => ManifoldSpec::from_json(&read(p)?)?,
        (None, Command::Katok) => katok_manifold(),
        (None, _) => return Err(Error::Invalid { op, what: "--manifold is required".into() }),
    };
    let mut problem = match &problem_path {
        Some(p) => ProblemSpec::from_json(&read(p)?)?,
        None => ProblemSpec::default(),
    };
    problem.check_fields(config.command)?;
    problem.apply_overrides(config.command, config.eps, config.tol)?;
    let model = manifold_spec.to_model()?;
    if config.command == Command::Katok {
        let hopf = crate::manifold::BuiltinRef::Name("hopf_s3".into()).resolve()?;
        let same = manifold_spec.builtin.as_ref().map(|b| b.resolve()).transpose()?.is_some_and(|b| b == hopf);
        if !same {
            return Err(Error::Invalid { op, what: "katok runs on the round S^3 with its Hopf field only".into() });
        }
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let stem = artifact_stem(config.command, &manifold_spec, &problem, config.seed);
    let artifacts = Artifacts {
        report: out_dir.join(format!("{stem}.json")),
        problem: out_dir.join(format!("{stem}.problem.json")),
        data: out_dir.join(format!("{stem}.csv")),
        stem,
    };
    if config.verbosity > 0 {
        eprintln!("{}: {} on '{}'", op, config.command.name(), model.name());
    }

    let (exit, body, csv) = match config.command {
        Command::Connect => run_connect(&model, &problem)?,
        Command::Closed => run_closed(&model, &problem)?,
        Command::Reach => run_reach(&model, &problem)?,
        Command::Katok => run_katok(&problem)?,
        Command::Orbits => run_orbits(&model, &problem)?,
        Command::Scan => run_scan(&model, &problem)?,
    };
    let report = json!({
        "command": config.command.name(),
        "manifold": manifold_spec.name,
        "seed": config.seed,
        "exit_code": exit,
        "result": body,
        "files": {"data": artifacts.data.file_name().map(|s| s.to_string_lossy().into_owned())},
    });
    let write = |path: &Path, text: &str| std::fs::write(path, text).map_err(|e| io_err(path, e));
    write(&artifacts.report, &to_json(&report))?;
    write(&artifacts.problem, &problem.to_json())?;
    write(&artifacts.data, &csv)?;
    Ok(RunOutcome { exit_code: exit, report, artifacts, csv })
}

type Run = (i32, Value, String);

fn vec_arg(name: &str, v: &Option<Vec<f64>>, dim: usize) -> Result<Option<DVector<f64>>> {
    match v {
        None => Ok(None),
        Some(x) if x.len() == dim => Ok(Some(DVector::from_column_slice(x))),
        Some(x) => Err(Error::Invalid { op: "cli::problem", what: format!("'{name}' has {} entries, manifold dim is {dim}", x.len()) }),
    }
}

fn connect_json(r: &ConnectResult) -> Value {
    json!({
        "status": r.status,
        "reason": r.reason,
        "length": r.length,
        "seed_length": r.seed_length,
        "gradient_norm": r.gradient_norm,
        "endpoint_error": r.endpoint_error,
        "iterations": r.iterations,
        "eps_trace": r.eps_trace,
        "failed_eps": r.failed_eps,
        "first_variation_residual": r.first_variation_residual,
        "geodesic": r.path.as_ref().map(|p| p.summary_json()),
    })
}

fn path_csv(path: &DiscretePath, close: bool) -> String {
    let n = path.dim();
    let mut out = String::from("s");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    let mut rows: Vec<Vec<f64>> = path
        .points
        .iter()
        .zip(&path.params)
        .map(|(x, s)| std::iter::once(*s).chain(x.iter().copied()).collect())
        .collect();
    if close {
        let mut first = rows[0].clone();
        first[0] = 1.0;
        rows.push(first);
    }
    for r in rows {
        out.push_str(&csv_row(&r));
    }
    out
}

/// Trajectory CSV of a connect result: the refined geodesic, else the discrete path.
pub fn emit_connect(r: &ConnectResult) -> String {
    match (&r.path, &r.discrete) {
        (Some(sol), _) => sol.to_csv(),
        (None, Some(d)) => path_csv(d, false),
        (None, None) => "s\n".into(),
    }
}

/// Closed trajectory CSV: one period of samples plus the first row repeated.
pub fn emit_closed(r: &ConnectResult) -> String {
    let Some(d) = r.path.as_ref().map(|s| &s.path).or(r.discrete.as_ref()) else {
        return "s\n".into();
    };
    let n = if d.closed { d.len() } else { d.len() - 1 };
    let points = d.points[..n].to_vec();
    let params = d.params[..n].to_vec();
    let lp = DiscretePath { params, points, velocities: None, closed: true, shift: d.shift.clone() };
    path_csv(&lp, true)
}

fn run_connect(model: &ManifoldModel, spec: &ProblemSpec) -> Result<Run> {
    let n = model.dim();
    let op = "cli::problem";
    let x0 = vec_arg("x0", &spec.x0, n)?.ok_or(Error::Invalid { op, what: "connect needs x0".into() })?;
    let x1 = vec_arg("x1", &spec.x1, n)?.ok_or(Error::Invalid { op, what: "connect needs x1".into() })?;
    let seed = spec.seed.clone().unwrap_or_default();
    let mut p = match ConnectProblem::new(model.clone(), x0, x1, &seed) {
        Ok(p) => p,
        Err(Error::NoAdmissibleSeed { reason, .. }) => {
            let r = ConnectResult::failure(ConnectStatus::NoAdmissibleSeed, reason);
            return Ok((3, connect_json(&r), emit_connect(&r)));
        }
        Err(e) => return Err(e),
    };
    if let Some(s) = spec.segments {
        p = p.segments(s);
    }
    if let Some(t) = spec.tolerances {
        p = p.tolerances(t);
    }
    if let Some(e) = &spec.eps_schedule {
        p = p.eps_schedule(e.clone());
    }
    p.validate()?;
    let r = if spec.homotopy.unwrap_or(false) { epsilon_homotopy(&p)? } else { minimize_length(&p)? };
    Ok((status_code(r.status), connect_json(&r), emit_connect(&r)))
}

fn run_closed(model: &ManifoldModel, spec: &ProblemSpec) -> Result<Run> {
    let op = "cli::problem";
    let seed = spec.seed_loop.as_ref().ok_or(Error::Invalid { op, what: "closed needs seed_loop".into() })?;
    let mut p = LoopProblem::new(model.clone(), seed.to_path()?)?;
    if let Some(s) = spec.segments {
        p = p.segments(s);
    }
    if let Some(t) = spec.tolerances {
        p = p.tolerances(t);
    }
    if let Some(e) = &spec.eps_schedule {
        p.eps_schedule = e.clone();
    }
    p.validate()?;
    let r = if spec.homotopy.unwrap_or(false) { closed_epsilon_homotopy(&p)? } else { closed_geodesic_in_class(&p)? };
    Ok((status_code(r.status), connect_json(&r), emit_closed(&r)))
}

fn run_reach(model: &ManifoldModel, spec: &ProblemSpec) -> Result<Run> {
    let n = model.dim();
    let source = vec_arg("source", &spec.source, n)?.unwrap_or_else(|| DVector::zeros(n));
    let bbox = spec.bbox.clone().unwrap_or_else(|| GridBox::cube(n, 1.0));
    let opts = spec.propagate.unwrap_or_default();
    let rs = if spec.backward.unwrap_or(false) {
        reachable::propagate_backward(model, &source, &bbox, &opts)?
    } else {
        reachable::propagate(model, &source, &bbox, &opts)?
    };
    let reached = rs.reached_count();
    let (exit, boundary) = match reachable::boundary_tangency_test(model, &rs) {
        Ok(rep) => (
            0,
            json!({
                "empty": false,
                "samples": rep.samples.len(),
                "max_angle_deg": rep.max_angle_deg,
                "mean_angle_deg": rep.mean_angle_deg,
                "max_wedge": rep.samples.iter().map(|s| s.wedge.abs()).fold(0.0, f64::max),
            }),
        ),
        Err(Error::BoundaryEmpty { reason, .. }) => (3, json!({"empty": true, "reason": reason})),
        Err(e) => return Err(e),
    };
    let body = json!({
        "nodes": rs.len(),
        "reached": reached,
        "reached_fraction": reached as f64 / rs.len() as f64,
        "h": rs.h,
        "shape": rs.shape,
        "boundary": boundary,
    });
    Ok((exit, body, rs.to_csv()))
}

fn run_katok(spec: &ProblemSpec) -> Result<Run> {
    let eps = spec.eps.clone().unwrap_or_else(|| KATOK_EPS.to_vec());
    let tol = spec.tol.unwrap_or(1e-12);
    let rows = closed::katok_table(&eps, tol)?;
    let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.numeric)).collect();
    let extrapolated = closed::extrapolate_to_zero(&samples);
    let mut csv = String::from("eps,short,long,numeric,error\n");
    for r in &rows {
        csv.push_str(&csv_row(&[r.eps, r.short, r.long, r.numeric, r.error]));
    }
    let body = json!({"rows": rows, "extrapolated_short": extrapolated, "tol": tol});
    Ok((0, body, csv))
}

fn run_orbits(model: &ManifoldModel, spec: &ProblemSpec) -> Result<Run> {
    let candidates = match closed::killing_orbit_candidates(model) {
        Ok(c) => c,
        Err(Error::HypothesisViolated { residual, .. }) => {
            return Ok((3, json!({"candidates": [], "reason": residual}), "orbit,s,x1\n".into()));
        }
        Err(e) => return Err(e),
    };
    let alphas = spec.alpha.clone().unwrap_or_else(|| ORBIT_ALPHA.to_vec());
    let perturbed = if candidates.is_empty() {
        Vec::new()
    } else {
        alphas.iter().map(|&a| closed::perturbed_orbit_lengths(model, a)).collect::<Result<Vec<_>>>()?
    };
    let n = model.dim();
    let mut csv = String::from("orbit,s");
    for i in 1..=n {
        let _ = write!(csv, ",x{i}");
    }
    csv.push('\n');
    let mut listed = Vec::new();
    for (k, c) in candidates.iter().enumerate() {
        let body = path_csv(&c.orbit, true);
        for line in body.lines().skip(1) {
            let _ = writeln!(csv, "{k},{line}");
        }
        listed.push(json!({
            "base_point": c.base_point.as_slice(),
            "period": c.period,
            "value": c.value,
            "criticality": c.criticality,
            "closure": c.closure,
            "length": c.length,
            "residual": c.residual,
            "criterion": c.criterion,
        }));
    }
    let exit = if candidates.is_empty() { 3 } else { 0 };
    Ok((exit, json!({"candidates": listed, "perturbed": perturbed}), csv))
}

fn run_scan(model: &ManifoldModel, spec: &ProblemSpec) -> Result<Run> {
    let n = model.dim();
    let bbox = match &spec.bbox {
        Some(b) => b.clone(),
        None => {
            let (lo, hi) = model.domain().sampling_box(1.0);
            GridBox { lower: lo, upper: hi }
        }
    };
    let rep = reachable::nonintegrability_scan(model, &bbox, spec.per_axis.unwrap_or(9))?;
    let mut csv = String::new();
    for i in 1..=n {
        let _ = write!(csv, "x{i},");
    }
    csv.push_str("value\n");
    for (p, v) in rep.points.iter().zip(&rep.values) {
        let mut row: Vec<f64> = p.to_vec();
        row.push(*v);
        csv.push_str(&csv_row(&row));
    }
    let body = json!({"measure": rep.measure, "samples": rep.values.len(), "nonzero_fraction": rep.nonzero_fraction});
    Ok((0, body, csv))
}

/// One-line human summary of a report.
pub fn summary(outcome: &RunOutcome) -> String {
    let r = &outcome.report["result"];
    let f = |v: &Value| v.as_f64().map(fmt_f64).unwrap_or_else(|| "null".into());
    let cmd = outcome.report["command"].as_str().unwrap_or("");
    let mut out = match cmd {
        "connect" | "closed" => {
            let mut s = format!("status {} length {}", r["status"].as_str().unwrap_or("?"), f(&r["length"]));
            if let Some(reason) = r["reason"].as_str() {
                let _ = write!(s, " ({reason})");
            }
            s
        }
        "reach" => format!("reached {} of {} nodes", r["reached"], r["nodes"]),
        "katok" => {
            let mut s = String::new();
            for row in r["rows"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    s,
                    "{} {} {} {} {}",
                    f(&row["eps"]),
                    f(&row["short"]),
                    f(&row["long"]),
                    f(&row["numeric"]),
                    f(&row["error"])
                );
            }
            let _ = write!(s, "extrapolated {}", f(&r["extrapolated_short"]));
            s
        }
        "orbits" => format!("{} closed Killing orbit(s)", r["candidates"].as_array().map_or(0, |a| a.len())),
        "scan" => format!("nonzero fraction {}", f(&r["nonzero_fraction"])),
        _ => String::new(),
    };
    let _ = write!(out, "\nwrote {}", outcome.artifacts.data.display());
    out
}

/// Installs the global worker pool from `KROPINA_NAV_THREADS`, if set.
pub fn init_threads() {
    if let Some(n) = std::env::var("KROPINA_NAV_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args`, runs and prints. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let config = RunConfig::from(args);
    match run(&config) {
        Ok(outcome) => {
            if config.json {
                print!("{}", to_json(&outcome.report));
            } else {
                println!("{}", summary(&outcome));
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Builtin lookup by short name, for tests and examples.
pub fn builtin_spec(name: &str) -> Result<ManifoldSpec> {
    let b: BuiltinGeometry = crate::manifold::BuiltinRef::Name(name.into()).resolve()?;
    let model = ManifoldModel::builtin(b);
    Ok(ManifoldSpec {
        name: name.into(),
        dim: model.dim(),
        periodic: Vec::new(),
        builtin: Some(crate::manifold::BuiltinRef::Name(name.into())),
        expressions: None,
        lower: None,
        upper: None,
    })
}

#[cfg(test)]
mod tests;
