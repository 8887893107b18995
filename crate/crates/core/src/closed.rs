//! Closed geodesics: loop minimization in a free homotopy class, the first
//! variation of length, Killing-orbit candidates and the Katok family.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connect::{
    check_schedule, default_eps_schedule, kropina_stage, randers_continuation, seed_or_failure, Continuation,
    ConnectResult, ConnectStatus, Tolerances, DEFAULT_SEGMENTS,
};
use crate::error::{Error, Result};
use crate::geodesic_flow::{
    hausdorff, integrate, path_length, DiscretePath, Dopri5, FlowKind, GeodesicSolution,
};
use crate::manifold::ManifoldModel;
use crate::metrics::{default_probes, zermelo_randers_value};
use crate::optimize::{lbfgs, LbfgsOptions};

/// Closure error accepted for a Killing orbit.
pub const ORBIT_CLOSURE_TOL: f64 = 1e-8;
/// First-variation residual accepted for a converged loop.
pub const FIRST_VARIATION_TOL: f64 = 1e-6;
/// Gradient threshold for critical points of the orbit functions.
pub const CRITICAL_GRADIENT_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LoopProblem {
    pub model: ManifoldModel,
    pub seed_loop: DiscretePath,
    pub segments: usize,
    pub tolerances: Tolerances,
    pub eps_schedule: Vec<f64>,
}

impl LoopProblem {
    pub fn new(model: ManifoldModel, seed_loop: DiscretePath) -> Result<Self> {
        let p = LoopProblem {
            model,
            seed_loop,
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

    pub fn validate(&self) -> Result<()> {
        let op = "closed::loop_problem";
        if !self.seed_loop.closed {
            return Err(Error::Invalid { op, what: "seed loop must be closed".into() });
        }
        if self.seed_loop.dim() != self.model.dim() {
            return Err(Error::Invalid { op, what: "dimension mismatch with the manifold".into() });
        }
        // the loop must stay inside one chart box
        for x in &self.seed_loop.points {
            self.model.check_guarded(op, x)?;
        }
        if self.segments < 8 {
            return Err(Error::OutOfRange { op, what: "need at least eight segments".into() });
        }
        check_schedule(op, &self.eps_schedule)
    }
}

/// Converts the periodic part of a closed geodesic solution into a closed loop
/// with velocities.
fn solution_loop(sol: &GeodesicSolution, shift: &DVector<f64>) -> Result<DiscretePath> {
    let n = sol.path.len() - 1;
    let vel = sol.path.velocities.as_ref().expect("integrated paths carry velocities");
    DiscretePath::closed_loop(sol.path.points[..n].to_vec(), shift.clone())?.with_velocities(vel[..n].to_vec())
}

/// Test fields `e_i` and `e_i cos(2 pi s)`.
pub fn variation_basis(dim: usize, samples: usize) -> Vec<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for wave in [false, true] {
            out.push(
                (0..samples)
                    .map(|k| {
                        let mut e = DVector::zeros(dim);
                        e[i] = if wave { (TAU * k as f64 / samples as f64).cos() } else { 1.0 };
                        e
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Largest `|delta L(xi)|` over [`variation_basis`].
pub fn first_variation_residual(model: &ManifoldModel, lp: &DiscretePath) -> Result<f64> {
    let basis = variation_basis(lp.dim(), lp.len());
    let values: Result<Vec<f64>> = basis.par_iter().map(|xi| first_variation(model, lp, xi)).collect();
    Ok(values?.into_iter().map(f64::abs).fold(0.0, f64::max))
}

/// Loop minimization in the free homotopy class of the seed, then periodic shooting.
pub fn closed_geodesic_in_class(problem: &LoopProblem) -> Result<ConnectResult> {
    problem.validate()?;
    let model = &problem.model;
    let (seed, seed_length) = match seed_or_failure(model, &problem.seed_loop)? {
        Ok(s) => s,
        Err(r) => return Ok(r),
    };
    let mut result = kropina_stage(model, &seed, problem.segments, &problem.tolerances)?;
    result.seed_length = Some(seed_length);
    attach_residual(model, &mut result, &seed.shift)?;
    Ok(result)
}

/// The Randers continuation run on loops, finished by the Kropina stage.
pub fn closed_epsilon_homotopy(problem: &LoopProblem) -> Result<ConnectResult> {
    problem.validate()?;
    let model = &problem.model;
    let tol = &problem.tolerances;
    let (seed, seed_length) = match seed_or_failure(model, &problem.seed_loop)? {
        Ok(s) => s,
        Err(r) => return Ok(r),
    };
    let (current, trace) = match randers_continuation(model, &seed, problem.segments, &problem.eps_schedule, tol)? {
        Continuation::Done(p, t) => (p, t),
        Continuation::Failed(eps, trace) => {
            let mut r = ConnectResult::failure(ConnectStatus::MaxIterations, format!("Randers stage left the chart at eps = {eps}"));
            r.failed_eps = Some(eps);
            r.eps_trace = trace;
            return Ok(r);
        }
    };
    let start = if crate::geodesic_flow::is_admissible(model, &current) { current } else { seed.clone() };
    let mut result = kropina_stage(model, &start, problem.segments, tol)?;
    result.eps_trace = trace;
    result.seed_length = Some(seed_length);
    attach_residual(model, &mut result, &seed.shift)?;
    Ok(result)
}

fn attach_residual(model: &ManifoldModel, result: &mut ConnectResult, shift: &DVector<f64>) -> Result<()> {
    if result.status != ConnectStatus::Converged {
        return Ok(());
    }
    let sol = result.path.as_ref().expect("converged results carry a path");
    let lp = solution_loop(sol, shift)?;
    let residual = first_variation_residual(model, &lp)?;
    result.first_variation_residual = Some(residual);
    if residual > FIRST_VARIATION_TOL * (1.0 + result.length) {
        result.status = ConnectStatus::MaxIterations;
        result.reason = Some(format!("first-variation residual {residual:.3e} above tolerance"));
    }
    Ok(())
}

/// First variation of Kropina length along the periodic field `xi`:
///
/// `dL = -1/2 int [ 2 g(x', D xi) / P - Q (d omega(xi, x') + d/ds omega(xi)) / P^2 ] ds`
///
/// with `Q = g(x', x')`, `P = omega(x')` and `D` the Levi-Civita derivative along
/// the loop. Velocities come from the loop or, if absent, from spectral
/// differentiation.
pub fn first_variation(model: &ManifoldModel, lp: &DiscretePath, xi: &[DVector<f64>]) -> Result<f64> {
    let op = "closed::first_variation";
    if !lp.closed {
        return Err(Error::Invalid { op, what: "first variation needs a closed loop".into() });
    }
    if xi.len() != lp.len() {
        return Err(Error::Invalid { op, what: "one xi sample per loop sample required".into() });
    }
    let vel = match &lp.velocities {
        Some(v) => v.clone(),
        None => lp.spectral_velocities(),
    };
    let dxi = DiscretePath::spectral_derivative(xi);
    let mut total = 0.0;
    for (k, x) in lp.points.iter().enumerate() {
        let g = model.metric_at(x)?;
        let w = model.one_form_at(x)?;
        let jw = model.one_form_jet(x)?;
        let gamma = model.christoffel_at(x)?;
        let v = &vel[k];
        let p = w.dot(v);
        if p >= 0.0 {
            return Err(Error::InadmissiblePath { op, segment: k });
        }
        let q = v.dot(&(&g * v));
        let cov = &dxi[k] + gamma.contract(v, &xi[k]);
        let d_omega = xi[k].dot(&((&jw - jw.transpose()) * v));
        let d_omega_xi = v.dot(&(&jw * &xi[k])) + w.dot(&dxi[k]);
        total += -0.5 * (2.0 * v.dot(&(&g * cov)) / p - q * (d_omega + d_omega_xi) / (p * p));
    }
    Ok(total / lp.len() as f64)
}

// ---------------------------------------------------------------------------
// Killing orbits

/// Which function is extremized to find orbit geodesics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitCriterion {
    /// `omega(Y)` constant: orbits through critical points of `g0(Y, Y)`.
    ConstantOmegaY,
    /// `g0(Y, Y)` constant: orbits through critical points of `omega(Y)`.
    ConstantNorm,
}

#[derive(Debug, Clone)]
pub struct KillingOrbitCandidate {
    pub base_point: DVector<f64>,
    /// Closed orbit sampled uniformly in time, with velocities `T Y`.
    pub orbit: DiscretePath,
    pub period: f64,
    /// `omega_p(Y_p)`.
    pub value: f64,
    /// Gradient norm of the extremized function at the base point.
    pub criticality: f64,
    pub closure: f64,
    pub length: f64,
    /// Largest first variation over [`variation_basis`].
    pub residual: f64,
    pub criterion: OrbitCriterion,
}

const ORBIT_SAMPLES: usize = 128;

fn killing(model: &ManifoldModel, x: &DVector<f64>) -> Option<DVector<f64>> {
    model.geometry().killing(x)
}

/// `d Y^k / d x^i` as the matrix `[(k, i)]`.
fn killing_jacobian(model: &ManifoldModel, x: &DVector<f64>) -> Option<DMatrix<f64>> {
    let n = x.len();
    let h = 1e-5;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        out.set_column(i, &((killing(model, &xp)? - killing(model, &xm)?) / (2.0 * h)));
    }
    Some(out)
}

/// Largest Lie-derivative residuals `(|L_Y g0|, |L_Y omega|)` over the probes.
pub fn killing_residuals(model: &ManifoldModel, probes: &[DVector<f64>]) -> Result<(f64, f64)> {
    let op = "closed::killing_orbit_candidates";
    let mut worst = (0.0f64, 0.0f64);
    for x in probes {
        let y = killing(model, x).ok_or_else(|| Error::HypothesisViolated { op, residual: "model has no Killing field".into() })?;
        let dy = killing_jacobian(model, x).expect("Killing field present");
        let g = model.metric_at(x)?;
        let jg = model.metric_jet(x)?;
        let mut lg = dy.transpose() * &g + &g * &dy;
        for (k, gk) in jg.iter().enumerate() {
            lg += gk * y[k];
        }
        let w = model.one_form_at(x)?;
        let jw = model.one_form_jet(x)?;
        let lw = jw.transpose() * &y + dy.transpose() * &w;
        worst.0 = worst.0.max(lg.amax());
        worst.1 = worst.1.max(lw.amax());
    }
    Ok(worst)
}

fn grid(model: &ManifoldModel) -> Vec<DVector<f64>> {
    let n = model.dim();
    let per_axis = ((1e5f64).powf(1.0 / n as f64).floor() as usize).min(16);
    let (lo, hi) = model.domain().sampling_box(1.0);
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    lo[i] + (k as f64 + 0.5) / per_axis as f64 * (hi[i] - lo[i])
                }),
            )
        })
        .collect()
}

fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> Option<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
    let h = 1e-5;
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        g[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Some(g)
}

/// Flow of `Y` from `p` up to time `t`.
fn flow(model: &ManifoldModel, p: &DVector<f64>, times: &[f64]) -> Result<Vec<DVector<f64>>> {
    let op = "closed::killing_orbit";
    let end = *times.last().expect("at least one output time");
    if end == 0.0 {
        return Ok(vec![p.clone(); times.len()]);
    }
    let rhs = |_t: f64, x: &DVector<f64>| killing(model, x).ok_or(Error::Invalid { op, what: "no Killing field".into() });
    let check = |_t: f64, x: &DVector<f64>| model.check_guarded(op, x);
    Ok(Dopri5::new(1e-13).solve(rhs, 0.0, p.clone(), end, times, check)?.0)
}

fn period_shift(model: &ManifoldModel, raw: &DVector<f64>) -> DVector<f64> {
    let dom = model.domain();
    DVector::from_iterator(raw.len(), (0..raw.len()).map(|i| match dom.period(i) {
        Some(per) => per * (raw[i] / per).round(),
        None => 0.0,
    }))
}

/// First return time of the orbit through `p`, refined by Newton on the
/// distance derivative; `None` when the orbit does not close within `t_max`.
fn orbit_period(model: &ManifoldModel, p: &DVector<f64>, t_max: f64) -> Option<(f64, DVector<f64>)> {
    let steps = 8192;
    let times: Vec<f64> = (1..=steps).map(|k| t_max * k as f64 / steps as f64).collect();
    let states = flow(model, p, &times).ok()?;
    let dom = model.domain();
    let dist: Vec<f64> = states.iter().map(|x| dom.distance(p.as_slice(), x.as_slice())).collect();
    let mut far = 0.0f64;
    let mut guess = None;
    for k in 1..steps - 1 {
        far = far.max(dist[k]);
        if far > 0.0 && dist[k] < 0.05 * far && dist[k] <= dist[k - 1] && dist[k] <= dist[k + 1] {
            guess = Some(times[k]);
            break;
        }
    }
    let mut t = guess?;
    for _ in 0..8 {
        let x = flow(model, p, &[t]).ok()?.pop()?;
        let d = dom.delta(p.as_slice(), x.as_slice());
        let y = killing(model, &x)?;
        let g = model.geometry().metric(&x);
        let step = d.dot(&(&g * &y)) / y.dot(&(&g * &y));
        t -= step;
        if step.abs() < 1e-15 * t.max(1.0) {
            break;
        }
    }
    let x = flow(model, p, &[t]).ok()?.pop()?;
    Some((t, period_shift(model, &(x - p))))
}

fn orbit_candidate(
    model: &ManifoldModel,
    p: &DVector<f64>,
    criterion: OrbitCriterion,
    criticality: f64,
    t_max: f64,
) -> Option<KillingOrbitCandidate> {
    let (period, shift) = orbit_period(model, p, t_max)?;
    let mut times: Vec<f64> = (0..=ORBIT_SAMPLES).map(|k| period * k as f64 / ORBIT_SAMPLES as f64).collect();
    times[0] = 0.0;
    let states = flow(model, p, &times[1..]).ok()?;
    let mut points = vec![p.clone()];
    points.extend(states.iter().take(ORBIT_SAMPLES - 1).cloned());
    let last = states.last()?;
    let closure = (last - p - &shift).amax();
    if closure > ORBIT_CLOSURE_TOL {
        return None;
    }
    let velocities: Vec<DVector<f64>> = points.iter().map(|x| killing(model, x).map(|y| y * period)).collect::<Option<_>>()?;
    let orbit = DiscretePath::closed_loop(points, shift).ok()?.with_velocities(velocities).ok()?;
    let length = path_length(model, &FlowKind::Kropina, &orbit).ok()?;
    let residual = first_variation_residual(model, &orbit).ok()?;
    let value = model.geometry().one_form(p).dot(&killing(model, p)?);
    Some(KillingOrbitCandidate { base_point: p.clone(), orbit, period, value, criticality, closure, length, residual, criterion })
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Closed geodesics traced by orbits of the Killing field of `model`.
///
/// With `omega(Y) < 0` constant the orbits through extrema of `g0(Y, Y)` are
/// geodesics; with `g0(Y, Y)` constant, those through critical points of
/// `omega(Y)`. When the extremized function is itself constant every closed orbit
/// qualifies and a few distinct ones are returned.
pub fn killing_orbit_candidates(model: &ManifoldModel) -> Result<Vec<KillingOrbitCandidate>> {
    let op = "closed::killing_orbit_candidates";
    if !model.has_killing_field() {
        return Err(Error::HypothesisViolated { op, residual: "model has no Killing field".into() });
    }
    let probes = default_probes(model, 5);
    let (lg, lw) = killing_residuals(model, &probes)?;
    if lg > 1e-6 {
        return Err(Error::HypothesisViolated { op, residual: format!("Lie derivative of g0 along Y is {lg:.3e}") });
    }
    if lw > 1e-6 {
        return Err(Error::HypothesisViolated { op, residual: format!("Lie derivative of omega along Y is {lw:.3e}") });
    }
    let geo = model.geometry().clone();
    let f_of = |x: &DVector<f64>| -> Option<f64> { Some(geo.one_form(x).dot(&geo.killing(x)?)) };
    let h_of = |x: &DVector<f64>| -> Option<f64> {
        let y = geo.killing(x)?;
        Some(y.dot(&(geo.metric(x) * &y)))
    };
    let pts = grid(model);
    let fs: Vec<f64> = pts.iter().map(|x| f_of(x).unwrap_or(f64::NAN)).collect();
    let hs: Vec<f64> = pts.iter().map(|x| h_of(x).unwrap_or(f64::NAN)).collect();
    let fmax = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(fmax < 0.0) {
        return Err(Error::HypothesisViolated { op, residual: format!("omega(Y) reaches {fmax:.3e} >= 0") });
    }
    let scale_f = fs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let scale_h = hs.iter().cloned().fold(0.0, f64::max);
    let (criterion, values, target): (OrbitCriterion, &Vec<f64>, &dyn Fn(&DVector<f64>) -> Option<f64>) =
        if spread(&fs) <= 1e-8 * (1.0 + scale_f) {
            (OrbitCriterion::ConstantOmegaY, &hs, &h_of)
        } else if spread(&hs) <= 1e-8 * (1.0 + scale_h) {
            (OrbitCriterion::ConstantNorm, &fs, &f_of)
        } else {
            return Err(Error::HypothesisViolated {
                op,
                residual: format!("neither omega(Y) (spread {:.3e}) nor g0(Y, Y) (spread {:.3e}) is constant", spread(&fs), spread(&hs)),
            });
        };

    let (lo, hi) = model.domain().sampling_box(1.0);
    let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let y_min = hs.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
    let t_max = 4.0 * TAU * extent / y_min.max(1e-6);

    let mut starts: Vec<(DVector<f64>, f64)> = Vec::new();
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if spread(values) <= 1e-8 * (1.0 + scale) {
        // every orbit qualifies; walk the grid and keep distinct orbits
        for p in pts.iter().step_by(pts.len().div_ceil(64).max(1)) {
            let g = fd_gradient(target, p).map(|g| g.amax()).unwrap_or(f64::NAN);
            starts.push((p.clone(), g));
        }
    } else {
        for sign in [1.0, -1.0] {
            let k = (0..pts.len())
                .filter(|&k| values[k].is_finite())
                .max_by(|&a, &b| (sign * values[a]).total_cmp(&(sign * values[b])))
                .expect("grid is nonempty");
            let obj = |z: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
                let dom = model.domain();
                if !dom.contains(z.as_slice()) || dom.in_guard(z.as_slice()) {
                    return None;
                }
                Some((-sign * target(z)?, -sign * fd_gradient(target, z)?))
            };
            let opts = LbfgsOptions { grad_tol: 1e-2 * CRITICAL_GRADIENT_TOL, max_iter: 500, ..LbfgsOptions::default() };
            let res = lbfgs(obj, pts[k].clone(), &opts);
            if let Some(r) = res {
                if r.grad_norm < CRITICAL_GRADIENT_TOL {
                    starts.push((r.x, r.grad_norm));
                }
            }
        }
    }

    let mut out: Vec<KillingOrbitCandidate> = Vec::new();
    for (p, crit) in starts {
        if out.len() >= 4 {
            break;
        }
        let Some(c) = orbit_candidate(model, &p, criterion, crit, t_max) else { continue };
        if out.iter().all(|o| hausdorff(model, &o.orbit, &c.orbit) > 1e-3) {
            out.push(c);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Katok family and perturbed orbits

/// Lengths `2 pi / (1 +- sqrt(1 - eps))` of the two Hopf circles under the Katok
/// metric `F_eps` on `S^3`; the long one is infinite at `eps = 0`.
pub fn katok_lengths(eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::OutOfRange { op: "closed::katok_lengths", what: format!("eps = {eps} must lie in (0, 1]") });
    }
    let r = (1.0 - eps).sqrt();
    Ok((TAU / (1.0 + r), TAU / (1.0 - r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KatokRow {
    pub eps: f64,
    pub short: f64,
    pub long: f64,
    /// Arrival time of the Katok geodesic once around a Hopf circle.
    pub numeric: f64,
    pub error: f64,
    pub closure: f64,
}

/// Closed form plus the numeric length of the short Hopf circle, integrated from
/// `(pi/4, 0, 0)` along the fiber direction.
pub fn katok_row(eps: f64, tol: f64) -> Result<KatokRow> {
    let (short, long) = katok_lengths(eps)?;
    let model = ManifoldModel::builtin(crate::manifold::BuiltinGeometry::hopf_sphere(2));
    let x0 = DVector::from_vec(vec![std::f64::consts::FRAC_PI_4, 0.0, 0.0]);
    let v0 = DVector::from_vec(vec![0.0, 1.0, 1.0]);
    let sol = integrate(&model, FlowKind::katok(eps), &x0, &v0, TAU, tol)?;
    let closure = (sol.endpoint() - &x0 - DVector::from_vec(vec![0.0, TAU, TAU])).amax();
    let numeric = sol.arrival_time();
    Ok(KatokRow { eps, short, long, numeric, error: (numeric - short).abs(), closure })
}

pub fn katok_table(eps: &[f64], tol: f64) -> Result<Vec<KatokRow>> {
    eps.par_iter().map(|&e| katok_row(e, tol)).collect()
}

/// Richardson extrapolation to `eps = 0` from the two smallest samples, assuming
/// the values are smooth in `eps`.
pub fn extrapolate_to_zero(samples: &[(f64, f64)]) -> Option<f64> {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (&(e1, v1), &(e2, v2)) = (s.first()?, s.get(1)?);
    (e2 != e1).then(|| v1 - e1 * (v2 - v1) / (e2 - e1))
}

/// Shortest closed-geodesic length `T / (1 + sqrt(alpha))` for the Zermelo data
/// `(g0, sqrt(alpha) Y / |Y|)` around an orbit of `g0`-length `T`.
pub fn perturbed_orbit_length(orbit_length: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || !(orbit_length > 0.0) {
        return Err(Error::OutOfRange { op: "closed::perturbed_orbit_lengths", what: format!("alpha = {alpha} must lie in (0, 1)") });
    }
    Ok(orbit_length / (1.0 + alpha.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedOrbit {
    pub alpha: f64,
    /// Riemannian length `T` of the orbit.
    pub orbit_length: f64,
    pub closed_form: f64,
    /// Zermelo travel time around the orbit, by quadrature.
    pub numeric: f64,
}

/// Zermelo travel time around `orbit` with wind `sqrt(alpha) Y / |Y|`.
pub fn perturbed_orbit_numeric(model: &ManifoldModel, orbit: &DiscretePath, alpha: f64) -> Result<f64> {
    let op = "closed::perturbed_orbit_lengths";
    let vel = orbit.velocities.clone().unwrap_or_else(|| orbit.spectral_velocities());
    let mut total = 0.0;
    for (x, v) in orbit.points.iter().zip(&vel) {
        let g = model.metric_at(x)?;
        let y = model.killing_at(x)?.ok_or(Error::Invalid { op, what: "no Killing field".into() })?;
        let wind = &y * (alpha.sqrt() / y.dot(&(&g * &y)).sqrt());
        total += zermelo_randers_value(&g, &wind, v);
    }
    Ok(total / orbit.len() as f64)
}

/// Closed form and numeric value of the short perturbed length on the first
/// Killing-orbit candidate of `model`.
pub fn perturbed_orbit_lengths(model: &ManifoldModel, alpha: f64) -> Result<PerturbedOrbit> {
    let op = "closed::perturbed_orbit_lengths";
    let candidates = killing_orbit_candidates(model)?;
    let orbit = &candidates
        .first()
        .ok_or_else(|| Error::HypothesisViolated { op, residual: "no closed Killing orbit found".into() })?
        .orbit;
    let vel = orbit.velocities.as_ref().expect("orbits carry velocities");
    let mut t = 0.0;
    for (x, v) in orbit.points.iter().zip(vel) {
        t += v.dot(&(model.metric_at(x)? * v)).sqrt();
    }
    let orbit_length = t / orbit.len() as f64;
    Ok(PerturbedOrbit {
        alpha,
        orbit_length,
        closed_form: perturbed_orbit_length(orbit_length, alpha)?,
        numeric: perturbed_orbit_numeric(model, orbit, alpha)?,
    })
}
