//! Two-point problems: admissible seeds, direct minimization of the discrete
//! energy, shooting refinement and the Randers continuation in epsilon.
//!
//! Paths are discretized as polylines with `N` chords. The discrete energy
//! `(N/2) sum F(m_k, d_k)^2`, with `m_k` the chord midpoint and `d_k` the chord,
//! is minimized over the free nodes. Its minimizers have equal chord lengths, so
//! they approximate constant-speed geodesics; shooting against the spray then
//! removes the discretization error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic_flow::{
    admissibility_margin, integrate_with, is_admissible, norm_with_gradients, path_length, DiscretePath,
    FlowKind, GeodesicSolution, IntegrateOptions, Parametrization, GAUSS3,
};
use crate::manifold::ManifoldModel;
use crate::metrics::{RandersFamily, TOL_ADM};
use crate::optimize::{lbfgs, newton_polish, LbfgsOptions, Termination};

pub const DEFAULT_SEGMENTS: usize = 64;
/// Loops or paths whose diameter falls below this are reported as collapsed.
pub const COLLAPSE_DIAMETER: f64 = 1e-3;
const COARSE_SEGMENTS: usize = 32;
/// Largest problem size for the dense Newton polish.
const POLISH_MAX_VARS: usize = 1200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Max-norm of the discrete energy gradient, relative to `max(1, E)`.
    pub gradient: f64,
    /// Relative energy change below which the minimizer stalls.
    pub length_change: f64,
    /// Endpoint (or closure) error of the shooting refinement.
    pub endpoint: f64,
    /// Integrator tolerance used while shooting.
    pub integrator: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { gradient: 1e-7, length_change: 1e-15, endpoint: 1e-10, integrator: 1e-12, max_iterations: 20000 }
    }
}

/// `2^-k` for `k = 0..14`.
pub fn default_eps_schedule() -> Vec<f64> {
    (0..15).map(|k| 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    Straight,
    Detour,
}

/// Seed description in problem files: `"straight"`, `"detour"` or an inline polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Named(SeedKind),
    Polyline(Vec<Vec<f64>>),
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Named(SeedKind::Straight)
    }
}

#[derive(Debug, Clone)]
pub struct ConnectProblem {
    pub model: ManifoldModel,
    pub x0: DVector<f64>,
    pub x1: DVector<f64>,
    /// Defines the homotopy class.
    pub seed_path: DiscretePath,
    pub segments: usize,
    pub tolerances: Tolerances,
    pub eps_schedule: Vec<f64>,
}

impl ConnectProblem {
    /// Builds the seed from its description. A `detour` seed skips the straight
    /// candidate and goes directly to the detour search.
    pub fn new(model: ManifoldModel, x0: DVector<f64>, x1: DVector<f64>, seed: &SeedSpec) -> Result<Self> {
        let op = "connect::problem";
        let seed_path = match seed {
            SeedSpec::Named(SeedKind::Straight) => DiscretePath::straight(&x0, &x1, COARSE_SEGMENTS),
            SeedSpec::Named(SeedKind::Detour) => {
                let straight = DiscretePath::straight(&x0, &x1, COARSE_SEGMENTS);
                admissibilize(&model, &straight, false)?
            }
            SeedSpec::Polyline(rows) => {
                let points = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
                DiscretePath::polyline(points).map_err(|e| Error::Invalid { op, what: e.to_string() })?
            }
        };
        let p = ConnectProblem {
            model,
            x0,
            x1,
            seed_path,
            segments: DEFAULT_SEGMENTS,
            tolerances: Tolerances::default(),
            eps_schedule: default_eps_schedule(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_seed_path(model: ManifoldModel, seed_path: DiscretePath) -> Result<Self> {
        let p = ConnectProblem {
            x0: seed_path.start().clone(),
            x1: seed_path.end(),
            model,
            seed_path,
            segments: DEFAULT_SEGMENTS,
            tolerances: Tolerances::default(),
            eps_schedule: default_eps_schedule(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn segments(mut self, n: usize) -> Self {
        self.segments = n;
        self
    }

    pub fn tolerances(mut self, t: Tolerances) -> Self {
        self.tolerances = t;
        self
    }

    pub fn eps_schedule(mut self, schedule: Vec<f64>) -> Self {
        self.eps_schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let op = "connect::problem";
        let n = self.model.dim();
        if self.x0.len() != n || self.x1.len() != n || self.seed_path.dim() != n {
            return Err(Error::Invalid { op, what: "dimension mismatch with the manifold".into() });
        }
        self.model.check_guarded(op, &self.x0)?;
        self.model.check_guarded(op, &self.x1)?;
        if self.seed_path.closed {
            return Err(Error::Invalid { op, what: "seed of a two-point problem must be open".into() });
        }
        let e0 = (self.seed_path.start() - &self.x0).amax();
        let e1 = (self.seed_path.end() - &self.x1).amax();
        if e0 > 1e-10 || e1 > 1e-10 {
            return Err(Error::Invalid { op, what: format!("seed endpoints miss (x0, x1) by {:e}", e0.max(e1)) });
        }
        if self.segments < 2 {
            return Err(Error::OutOfRange { op, what: "need at least two segments".into() });
        }
        check_schedule(op, &self.eps_schedule)
    }
}

pub(crate) fn check_schedule(op: &'static str, schedule: &[f64]) -> Result<()> {
    if schedule.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(Error::OutOfRange { op, what: "epsilon schedule must lie in (0, 1]".into() });
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::OutOfRange { op, what: "epsilon schedule must decrease".into() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnectStatus {
    Converged,
    NoAdmissibleSeed,
    ConeCollapse,
    MaxIterations,
    Collapsed,
}

/// One stage of the epsilon continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsStage {
    pub eps: f64,
    /// Randers length `L_eps` of the stage minimizer.
    pub delta: f64,
    pub endpoint_error: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ConnectResult {
    pub status: ConnectStatus,
    pub reason: Option<String>,
    /// Shooting-refined geodesic, in constant-speed parametrization.
    pub path: Option<GeodesicSolution>,
    /// Discrete minimizer the refinement started from.
    pub discrete: Option<DiscretePath>,
    pub length: f64,
    pub seed_length: Option<f64>,
    pub gradient_norm: f64,
    /// Endpoint error for open problems, closure error for loops.
    pub endpoint_error: f64,
    pub iterations: usize,
    pub eps_trace: Vec<EpsStage>,
    pub failed_eps: Option<f64>,
    /// Largest first-variation value over the test fields (closed problems).
    pub first_variation_residual: Option<f64>,
}

impl ConnectResult {
    pub(crate) fn failure(status: ConnectStatus, reason: impl Into<String>) -> Self {
        ConnectResult {
            status,
            reason: Some(reason.into()),
            path: None,
            discrete: None,
            length: f64::NAN,
            seed_length: None,
            gradient_norm: f64::NAN,
            endpoint_error: f64::NAN,
            iterations: 0,
            eps_trace: Vec::new(),
            failed_eps: None,
            first_variation_residual: None,
        }
    }

    pub fn is_converged(&self) -> bool {
        self.status == ConnectStatus::Converged
    }
}

// ---------------------------------------------------------------------------
// admissible seeds

/// Returns an admissible path homotopic to `path` (same endpoints, or same free
/// class for loops), or `NoAdmissibleSeed`.
pub fn admissibilize_seed(model: &ManifoldModel, path: &DiscretePath) -> Result<DiscretePath> {
    admissibilize(model, path, true)
}

pub(crate) fn admissibilize(model: &ManifoldModel, path: &DiscretePath, allow_direct: bool) -> Result<DiscretePath> {
    let op = "connect::admissibilize_seed";
    model.check_point(op, path.start())?;
    model.check_point(op, &path.end())?;
    if allow_direct && is_admissible(model, path) {
        return Ok(path.clone());
    }
    if let Some(reason) = closed_form_obstruction(model, path) {
        return Err(Error::NoAdmissibleSeed { op, reason });
    }
    let base = coarse(path);
    let mut candidates = Vec::new();
    if allow_direct && chart_length(&base) > 0.0 {
        candidates.push(base.clone());
    }
    candidates.extend(detour_candidates(&base));
    for cand in candidates {
        if let Some(p) = raise_margin(model, &cand) {
            if homotopy_valid(model, path, &p) {
                return Ok(p);
            }
        }
    }
    Err(Error::NoAdmissibleSeed { op, reason: "the local detour search found no admissible curve in the class".into() })
}

fn coarse(path: &DiscretePath) -> DiscretePath {
    if path.closed {
        path.resample(COARSE_SEGMENTS)
    } else {
        path.resample(COARSE_SEGMENTS + 1)
    }
}

fn chart_length(path: &DiscretePath) -> f64 {
    (0..path.segment_count()).map(|k| path.segment(k).1.norm()).sum()
}

/// When `d omega = 0` along the path, `int omega` is a homotopy invariant of the
/// class, and admissible curves need it negative.
fn closed_form_obstruction(model: &ManifoldModel, path: &DiscretePath) -> Option<String> {
    let geo = model.geometry();
    let mut scale: f64 = 0.0;
    let mut curl: f64 = 0.0;
    let mut integral = 0.0;
    for k in 0..path.segment_count() {
        let (a, d, _) = path.segment(k);
        for t in [0.0, 0.5] {
            let x = &a + &d * t;
            scale = scale.max(geo.one_form(&x).amax());
            let j = geo.one_form_jet(&x);
            curl = curl.max((&j - j.transpose()).amax());
        }
        for (t, w) in GAUSS3 {
            integral += w * geo.one_form(&(&a + &d * t)).dot(&d);
        }
    }
    let length = chart_length(path);
    if curl <= 1e-10 * (1.0 + scale) && integral >= -TOL_ADM * (1.0 + length) {
        Some(format!(
            "omega is closed along the class and its integral is {integral:.3e} >= 0, so no admissible curve exists"
        ))
    } else {
        None
    }
}

/// Loops of several sizes, windings and orientations added in each coordinate plane.
fn detour_candidates(base: &DiscretePath) -> Vec<DiscretePath> {
    let n = base.dim();
    let scale = chart_length(base).max(0.25);
    let mut out = Vec::new();
    for winding in [1.0, 2.0] {
        for amp in [0.5, 1.0, 2.0] {
            for i in 0..n {
                for j in (i + 1)..n {
                    for sign in [1.0, -1.0] {
                        let a = amp * scale / winding;
                        let mut points = base.points.clone();
                        for (p, s) in points.iter_mut().zip(&base.params) {
                            let th = std::f64::consts::TAU * winding * s;
                            p[i] += a * (th.cos() - 1.0);
                            p[j] += sign * a * th.sin();
                        }
                        let cand = if base.closed {
                            DiscretePath::closed_loop(points, base.shift.clone())
                        } else {
                            DiscretePath::polyline(points)
                        };
                        if let Ok(c) = cand {
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    out
}

struct MarginField<'a> {
    model: &'a ManifoldModel,
    template: DiscretePath,
    free: std::ops::Range<usize>,
}

const MARGIN_NODES: [f64; 5] = [0.0, GAUSS3[0].0, 0.5, GAUSS3[2].0, 1.0];

impl MarginField<'_> {
    fn nodes(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = self.template.dim();
        let mut pts = self.template.points.clone();
        for (slot, k) in self.free.clone().enumerate() {
            pts[k] = z.rows(slot * n, n).into_owned();
        }
        pts
    }

    fn chord(&self, pts: &[DVector<f64>], k: usize) -> (DVector<f64>, DVector<f64>) {
        let b = if k + 1 == pts.len() { &pts[0] + &self.template.shift } else { pts[k + 1].clone() };
        (pts[k].clone(), b - &pts[k])
    }

    fn chord_margins(&self, a: &DVector<f64>, d: &DVector<f64>) -> Option<[f64; 5]> {
        let geo = self.model.geometry();
        let dom = self.model.domain();
        let mut out = [0.0; 5];
        for (slot, t) in MARGIN_NODES.iter().enumerate() {
            let x = a + d * *t;
            if !dom.contains(x.as_slice()) || dom.in_guard(x.as_slice()) {
                return None;
            }
            let norm = d.dot(&(geo.metric(&x) * d)).sqrt();
            out[slot] = if norm > 1e-300 { -geo.one_form(&x).dot(d) / norm } else { -1.0 };
        }
        Some(out)
    }

    fn all_margins(&self, pts: &[DVector<f64>]) -> Option<Vec<[f64; 5]>> {
        (0..self.template.segment_count()).map(|k| {
            let (a, d) = self.chord(pts, k);
            self.chord_margins(&a, &d)
        }).collect()
    }
}

fn soft_min(values: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = values.iter().map(|m| (-(m - lo) / tau).exp()).collect();
    let sum: f64 = weights.iter().sum();
    (lo - tau * sum.ln(), weights.into_iter().map(|w| w / sum).collect())
}

/// Pushes the smallest normalized cone margin above zero by maximizing a soft
/// minimum over chord nodes; `None` when the search stalls first.
fn raise_margin(model: &ManifoldModel, cand: &DiscretePath) -> Option<DiscretePath> {
    let geo = model.geometry();
    let omega_scale = cand
        .points
        .iter()
        .map(|x| {
            let w = geo.one_form(x);
            w.dot(&(geo.metric(x).try_inverse().unwrap_or_else(|| DMatrix::identity(w.len(), w.len())) * &w)).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    if !(omega_scale > 0.0) {
        return None;
    }
    let tau = 0.005 * omega_scale;
    let target = 0.02 * omega_scale;
    let n = cand.dim();
    let free = if cand.closed { 0..cand.len() } else { 1..cand.len() - 1 };
    let field = MarginField { model, template: cand.clone(), free: free.clone() };
    let segs = cand.segment_count();
    let fd = 1e-7 * (1.0 + chart_length(cand));

    let objective = |z: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let pts = field.nodes(z);
        let margins = field.all_margins(&pts)?;
        let flat: Vec<f64> = margins.iter().flatten().cloned().collect();
        let (s, weights) = soft_min(&flat, tau);
        let mut grad = DVector::zeros(z.len());
        for (slot, node) in free.clone().enumerate() {
            let touching = [(node + segs - 1) % segs, node % segs];
            for c in 0..n {
                let mut acc = 0.0;
                for &k in &touching {
                    if !cand.closed && (k >= segs || (node == 0 && k == segs - 1)) {
                        continue;
                    }
                    let mut plus = pts.clone();
                    plus[node][c] += fd;
                    let mut minus = pts.clone();
                    minus[node][c] -= fd;
                    let (ap, dp) = field.chord(&plus, k);
                    let (am, dm) = field.chord(&minus, k);
                    let mp = field.chord_margins(&ap, &dp)?;
                    let mm = field.chord_margins(&am, &dm)?;
                    for t in 0..5 {
                        acc += weights[5 * k + t] * (mp[t] - mm[t]) / (2.0 * fd);
                    }
                }
                grad[slot * n + c] = -acc;
            }
        }
        Some((-s, grad))
    };

    let mut z = DVector::zeros(free.len() * n);
    for (slot, k) in free.clone().enumerate() {
        z.rows_mut(slot * n, n).copy_from(&cand.points[k]);
    }
    let opts = LbfgsOptions { max_iter: 400, grad_tol: 1e-12, f_target: -target, ..LbfgsOptions::default() };
    let res = lbfgs(objective, z, &opts)?;
    let pts = field.nodes(&res.x);
    let out = if cand.closed {
        DiscretePath::closed_loop(pts, cand.shift.clone()).ok()?
    } else {
        DiscretePath::polyline(pts).ok()?
    };
    (admissibility_margin(model, &out) > 1e-6).then_some(out)
}

/// Straight-line homotopy between the two curves stays in the chart.
fn homotopy_valid(model: &ManifoldModel, a: &DiscretePath, b: &DiscretePath) -> bool {
    if a.closed != b.closed || (a.closed && (&a.shift - &b.shift).amax() > 1e-12) {
        return false;
    }
    let count = if a.closed { 64 } else { 65 };
    let (ra, rb) = (a.resample(count), b.resample(count));
    let dom = model.domain();
    (0..=8).all(|l| {
        let lam = l as f64 / 8.0;
        ra.points.iter().zip(&rb.points).all(|(p, q)| {
            let x = p * (1.0 - lam) + q * lam;
            dom.contains(x.as_slice()) && !dom.in_guard(x.as_slice())
        })
    })
}

// ---------------------------------------------------------------------------
// discrete energy

/// `(N/2) sum F(m_k, d_k)^2 - mu sum ln(-omega(m_k)(d_k))` over the free nodes.
pub(crate) struct DiscreteEnergy<'a> {
    model: &'a ManifoldModel,
    kind: FlowKind,
    template: DiscretePath,
    pub mu: f64,
}

impl<'a> DiscreteEnergy<'a> {
    pub fn new(model: &'a ManifoldModel, kind: FlowKind, template: &DiscretePath) -> Self {
        DiscreteEnergy { model, kind, template: template.clone(), mu: 0.0 }
    }

    fn free(&self) -> std::ops::Range<usize> {
        if self.template.closed {
            0..self.template.len()
        } else {
            1..self.template.len() - 1
        }
    }

    pub fn pack(&self, path: &DiscretePath) -> DVector<f64> {
        let n = path.dim();
        let free = self.free();
        let mut z = DVector::zeros(free.len() * n);
        for (slot, k) in free.enumerate() {
            z.rows_mut(slot * n, n).copy_from(&path.points[k]);
        }
        z
    }

    pub fn path(&self, z: &DVector<f64>) -> DiscretePath {
        let n = self.template.dim();
        let mut out = self.template.clone();
        for (slot, k) in self.free().enumerate() {
            out.points[k] = z.rows(slot * n, n).into_owned();
        }
        out
    }

    pub fn eval(&self, z: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let path = self.path(z);
        let n = path.dim();
        let segs = path.segment_count();
        let nf = segs as f64;
        let dom = self.model.domain();
        if path.points.iter().any(|x| !dom.contains(x.as_slice()) || dom.in_guard(x.as_slice())) {
            return None;
        }
        let mut value = 0.0;
        let mut node_grad = vec![DVector::<f64>::zeros(n); path.len()];
        let kropina = matches!(self.kind, FlowKind::Kropina);
        for k in 0..segs {
            let (a, d, _) = path.segment(k);
            let m = &a + &d * 0.5;
            let ng = norm_with_gradients(self.model, &self.kind, &m, &d)?;
            value += 0.5 * nf * ng.value * ng.value;
            let mut gd = &ng.dv * (nf * ng.value);
            let mut gm = &ng.dx * (nf * ng.value);
            if kropina && self.mu > 0.0 {
                let geo = self.model.geometry();
                let w = geo.one_form(&m);
                let p = w.dot(&d);
                if -p <= 0.0 {
                    return None;
                }
                value -= self.mu * (-p).ln();
                gd -= &w * (self.mu / p);
                gm -= (geo.one_form_jet(&m) * &d) * (self.mu / p);
            }
            let next = (k + 1) % path.len();
            node_grad[k] += -&gd + &gm * 0.5;
            node_grad[next] += &gd + &gm * 0.5;
        }
        let free = self.free();
        let mut grad = DVector::zeros(free.len() * n);
        for (slot, k) in free.enumerate() {
            grad.rows_mut(slot * n, n).copy_from(&node_grad[k]);
        }
        value.is_finite().then_some((value, grad))
    }
}

pub(crate) struct Descent {
    pub path: DiscretePath,
    pub energy: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Minimizes the discrete energy from `start`; the Kropina case anneals a log
/// barrier to zero first. `None` when `start` is outside the feasible set.
pub(crate) fn descend(model: &ManifoldModel, kind: FlowKind, start: &DiscretePath, tol: &Tolerances) -> Option<Descent> {
    let mut energy = DiscreteEnergy::new(model, kind, start);
    let mut z = energy.pack(start);
    let (e0, _) = energy.eval(&z)?;
    let barrier: &[f64] = if matches!(kind, FlowKind::Kropina) { &[1e-4, 1e-7, 0.0] } else { &[0.0] };
    let scale = e0 / start.segment_count() as f64;
    let mut iterations = 0;
    let mut last = None;
    for &mu in barrier {
        energy.mu = mu * scale;
        let opts = LbfgsOptions {
            max_iter: tol.max_iterations,
            grad_tol: 1e-2 * tol.gradient * e0.max(1.0),
            f_rel_tol: tol.length_change,
            ..LbfgsOptions::default()
        };
        let res = lbfgs(|z| energy.eval(z), z.clone(), &opts)?;
        iterations += res.iterations;
        z = res.x.clone();
        last = Some(res);
    }
    let mut res = last?;
    let target = 1e-2 * tol.gradient * e0.max(1.0);
    if res.grad_norm > target && res.termination != Termination::MaxIterations && z.len() <= POLISH_MAX_VARS {
        // L-BFGS stops once f changes at rounding level; finish on the gradient
        if let Some(p) = newton_polish(|z| energy.eval(z), z.clone(), target, 8) {
            if p.grad_norm < res.grad_norm {
                iterations += p.iterations;
                z = p.x.clone();
                res = p;
            }
        }
    }
    Some(Descent { path: energy.path(&z), energy: res.f, gradient_norm: res.grad_norm, iterations, termination: res.termination })
}

// ---------------------------------------------------------------------------
// shooting

fn shooting_options(tol: &Tolerances, samples: usize) -> IntegrateOptions {
    IntegrateOptions::new(tol.integrator).parametrization(Parametrization::ConstantSpeed).samples(samples)
}

/// Least-squares Newton step `-J^+ r` with small singular values dropped.
fn pinv_step(jac: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let u = svd.u.as_ref()?;
    let vt = svd.v_t.as_ref()?;
    let mut out = DVector::zeros(jac.ncols());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-9 * smax {
            let coef = u.column(i).dot(r) / s;
            out -= vt.row(i).transpose() * coef;
        }
    }
    Some(out)
}

/// Damped Gauss-Newton on `residual(u) = 0` with a forward-difference Jacobian.
fn gauss_newton<R>(mut residual: R, u0: DVector<f64>, target: f64) -> (DVector<f64>, f64)
where
    R: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut u = u0;
    let Some(mut r) = residual(&u) else { return (u, f64::INFINITY) };
    for _ in 0..40 {
        if r.amax() < target {
            break;
        }
        let mut jac = DMatrix::zeros(r.len(), u.len());
        let mut ok = true;
        for i in 0..u.len() {
            let h = 1e-7 * (1.0 + u[i].abs());
            let mut up = u.clone();
            up[i] += h;
            if let Some(rp) = residual(&up) {
                jac.set_column(i, &((rp - &r) / h));
            } else {
                up[i] = u[i] - h;
                match residual(&up) {
                    Some(rm) => jac.set_column(i, &((&r - rm) / h)),
                    None => ok = false,
                }
            }
        }
        if !ok {
            break;
        }
        let Some(step) = pinv_step(&jac, &r) else { break };
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..16 {
            let trial = &u + &step * lam;
            if let Some(rt) = residual(&trial) {
                if rt.norm() < r.norm() {
                    u = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let err = r.amax();
    (u, err)
}

/// Shoots `v0` from `x0` so that the constant-speed geodesic over `[0, 1]` ends at `x1`.
pub(crate) fn shoot_open(
    model: &ManifoldModel,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    v_guess: &DVector<f64>,
    tol: &Tolerances,
) -> Result<(GeodesicSolution, f64)> {
    let quick = shooting_options(tol, 2);
    let residual = |v: &DVector<f64>| {
        integrate_with(model, FlowKind::Kropina, x0, v, 1.0, &quick).ok().map(|s| s.endpoint() - x1)
    };
    let (v, _) = gauss_newton(residual, v_guess.clone(), 0.1 * tol.endpoint);
    let sol = integrate_with(model, FlowKind::Kropina, x0, &v, 1.0, &shooting_options(tol, crate::geodesic_flow::DEFAULT_SAMPLES))?;
    let err = (sol.endpoint() - x1).amax();
    Ok((sol, err))
}

/// Periodic shooting on `(x0, v0)`: the geodesic must return to `x0 + shift` with
/// its initial velocity.
pub(crate) fn shoot_closed(
    model: &ManifoldModel,
    x_guess: &DVector<f64>,
    v_guess: &DVector<f64>,
    shift: &DVector<f64>,
    tol: &Tolerances,
) -> Result<(GeodesicSolution, f64)> {
    let n = x_guess.len();
    let quick = shooting_options(tol, 2);
    let residual = |u: &DVector<f64>| {
        let x = u.rows(0, n).into_owned();
        let v = u.rows(n, n).into_owned();
        let sol = integrate_with(model, FlowKind::Kropina, &x, &v, 1.0, &quick).ok()?;
        let mut r = DVector::zeros(2 * n);
        r.rows_mut(0, n).copy_from(&(sol.endpoint() - &x - shift));
        let vel = sol.path.velocities.as_ref()?;
        r.rows_mut(n, n).copy_from(&(&vel[vel.len() - 1] - &v));
        Some(r)
    };
    let mut u0 = DVector::zeros(2 * n);
    u0.rows_mut(0, n).copy_from(x_guess);
    u0.rows_mut(n, n).copy_from(v_guess);
    let (u, _) = gauss_newton(residual, u0, 0.1 * tol.endpoint);
    let x = u.rows(0, n).into_owned();
    let v = u.rows(n, n).into_owned();
    let sol = integrate_with(model, FlowKind::Kropina, &x, &v, 1.0, &shooting_options(tol, crate::geodesic_flow::DEFAULT_SAMPLES))?;
    let vel = sol.path.velocities.as_ref().expect("integrated paths carry velocities");
    let err = (sol.endpoint() - &x - shift).amax().max((&vel[vel.len() - 1] - &v).amax());
    Ok((sol, err))
}

/// Second-order one-sided estimate of the velocity at the first node.
fn initial_velocity(path: &DiscretePath) -> DVector<f64> {
    let n = path.segment_count() as f64;
    if path.len() >= 3 {
        (&path.points[1] * 4.0 - &path.points[0] * 3.0 - &path.points[2]) * (n / 2.0)
    } else {
        (&path.points[1] - &path.points[0]) * n
    }
}

/// Points of `path` resampled to `count` nodes; falls back to chord subdivision
/// when corner cutting breaks admissibility.
fn working_path(model: &ManifoldModel, path: &DiscretePath, segments: usize) -> DiscretePath {
    let count = if path.closed { segments } else { segments + 1 };
    let resampled = path.resample(count);
    if is_admissible(model, &resampled) {
        return resampled;
    }
    let per = segments.div_ceil(path.segment_count()).max(1);
    let mut points = Vec::new();
    for k in 0..path.segment_count() {
        let (a, d, _) = path.segment(k);
        for j in 0..per {
            points.push(&a + &d * (j as f64 / per as f64));
        }
    }
    if path.closed {
        DiscretePath::closed_loop(points, path.shift.clone()).expect("subdivided loop is valid")
    } else {
        points.push(path.end());
        DiscretePath::polyline(points).expect("subdivided path is valid")
    }
}

/// Kropina stage shared by open and closed problems: discrete minimization from an
/// admissible start, collapse guard, then shooting.
pub(crate) fn kropina_stage(
    model: &ManifoldModel,
    start: &DiscretePath,
    segments: usize,
    tol: &Tolerances,
) -> Result<ConnectResult> {
    let work = working_path(model, start, segments);
    let Some(descent) = descend(model, FlowKind::Kropina, &work, tol) else {
        return Ok(ConnectResult::failure(ConnectStatus::ConeCollapse, "the start path is not strictly admissible"));
    };
    let discrete = descent.path;
    let grad_tol = tol.gradient * descent.energy.max(1.0);
    let mut result = ConnectResult::failure(ConnectStatus::MaxIterations, "");
    result.reason = None;
    result.gradient_norm = descent.gradient_norm;
    result.iterations = descent.iterations;
    result.length = path_length(model, &FlowKind::Kropina, &discrete).unwrap_or(f64::NAN);
    result.discrete = Some(discrete.clone());
    // with coincident ends, a path that keeps shrinking without converging is a
    // minimizing sequence heading for the constant curve
    let coincident = !discrete.closed && model.domain().distance(discrete.start().as_slice(), discrete.end().as_slice()) < 1e-12;
    let shrinking = discrete.diameter(model) < 0.75 * work.diameter(model) && descent.gradient_norm > grad_tol;
    if discrete.diameter(model) < COLLAPSE_DIAMETER || (coincident && shrinking) {
        result.status = ConnectStatus::Collapsed;
        result.reason = Some("the minimizing sequence collapses to a point; the infimum is not attained".into());
        return Ok(result);
    }
    let shot = if discrete.closed {
        let v0 = discrete.spectral_velocities().swap_remove(0);
        shoot_closed(model, discrete.start(), &v0, &discrete.shift, tol)
    } else {
        shoot_open(model, discrete.start(), &discrete.end(), &initial_velocity(&discrete), tol)
    };
    match shot {
        Ok((sol, err)) => {
            result.endpoint_error = err;
            if err < tol.endpoint.max(1e-8) {
                result.length = sol.arrival_time();
                result.path = Some(sol);
                if descent.gradient_norm < grad_tol {
                    result.status = ConnectStatus::Converged;
                } else {
                    result.reason = Some(format!("discrete gradient {:.3e} above tolerance", descent.gradient_norm));
                }
            } else {
                result.path = Some(sol);
                result.reason = Some(format!("shooting stopped with endpoint error {err:.3e}"));
            }
        }
        Err(e) => {
            result.reason = Some(e.to_string());
            if descent.termination == Termination::LineSearch && descent.gradient_norm > grad_tol {
                result.status = ConnectStatus::ConeCollapse;
            }
        }
    }
    if result.status == ConnectStatus::MaxIterations
        && descent.termination == Termination::LineSearch
        && descent.gradient_norm > 1e3 * grad_tol
    {
        result.status = ConnectStatus::ConeCollapse;
    }
    Ok(result)
}

pub(crate) fn seed_or_failure(model: &ManifoldModel, seed: &DiscretePath) -> Result<std::result::Result<(DiscretePath, f64), ConnectResult>> {
    match admissibilize_seed(model, seed) {
        Ok(p) => {
            let len = path_length(model, &FlowKind::Kropina, &p)?;
            Ok(Ok((p, len)))
        }
        Err(Error::NoAdmissibleSeed { reason, .. }) => Ok(Err(ConnectResult::failure(ConnectStatus::NoAdmissibleSeed, reason))),
        Err(e) => Err(e),
    }
}

/// Direct minimization of the discrete Kropina energy followed by shooting.
pub fn minimize_length(problem: &ConnectProblem) -> Result<ConnectResult> {
    problem.validate()?;
    let (seed, seed_length) = match seed_or_failure(&problem.model, &problem.seed_path)? {
        Ok(s) => s,
        Err(r) => return Ok(r),
    };
    let mut result = kropina_stage(&problem.model, &seed, problem.segments, &problem.tolerances)?;
    result.seed_length = Some(seed_length);
    Ok(result)
}

pub(crate) enum Continuation {
    Done(DiscretePath, Vec<EpsStage>),
    Failed(f64, Vec<EpsStage>),
}

/// Warm-started Randers minimizations along the schedule, recording `Delta_eps`.
pub(crate) fn randers_continuation(
    model: &ManifoldModel,
    seed: &DiscretePath,
    segments: usize,
    schedule: &[f64],
    tol: &Tolerances,
) -> Result<Continuation> {
    let mut current = working_path(model, seed, segments);
    let (x0, x1) = (seed.start().clone(), seed.end());
    let mut trace = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let kind = FlowKind::Randers { eps, family: RandersFamily::Standard };
        let Some(d) = descend(model, kind, &current, tol) else {
            return Ok(Continuation::Failed(eps, trace));
        };
        current = d.path;
        let endpoint_error = (current.start() - &x0).amax().max((current.end() - &x1).amax());
        trace.push(EpsStage { eps, delta: path_length(model, &kind, &current)?, endpoint_error, gradient_norm: d.gradient_norm });
    }
    Ok(Continuation::Done(current, trace))
}

/// Randers continuation: minimize the `F_eps` energy for each epsilon of the
/// schedule with warm starts, record `Delta_eps`, then finish with the Kropina stage.
pub fn epsilon_homotopy(problem: &ConnectProblem) -> Result<ConnectResult> {
    problem.validate()?;
    let model = &problem.model;
    let tol = &problem.tolerances;
    let (seed, seed_length) = match seed_or_failure(model, &problem.seed_path)? {
        Ok(s) => s,
        Err(r) => return Ok(r),
    };
    let (current, trace) = match randers_continuation(model, &seed, problem.segments, &problem.eps_schedule, tol)? {
        Continuation::Done(path, trace) => (path, trace),
        Continuation::Failed(eps, trace) => {
            let mut r = ConnectResult::failure(ConnectStatus::MaxIterations, format!("Randers stage left the chart at eps = {eps}"));
            r.failed_eps = Some(eps);
            r.eps_trace = trace;
            r.seed_length = Some(seed_length);
            return Ok(r);
        }
    };
    let start = if is_admissible(model, &current) { current } else { seed };
    let mut result = kropina_stage(model, &start, problem.segments, tol)?;
    if !result.is_converged() {
        result.failed_eps = Some(0.0);
    }
    result.eps_trace = trace;
    result.seed_length = Some(seed_length);
    Ok(result)
}
