//! Lengths and energies of discrete paths.
//!
//! Paths with velocity samples on a uniform grid use Romberg integration (open,
//! `2^k + 1` samples), composite Simpson/trapezoid otherwise, or the periodic
//! trapezoid rule (closed). Polylines are integrated chord by chord with
//! three-point Gauss–Legendre.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::manifold::ManifoldModel;
use crate::metrics::{check_eps, kropina_formula, randers_parts, TOL_ADM};

use super::{DiscretePath, FlowKind};

pub(crate) const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Finsler norm of `v` at `x` for the given kind; `None` when a Kropina vector is
/// outside the admissible cone.
pub(crate) fn local_norm(model: &ManifoldModel, kind: &FlowKind, x: &DVector<f64>, v: &DVector<f64>) -> Option<f64> {
    let geo = model.geometry();
    let g = geo.metric(x);
    let w = geo.one_form(x);
    let q = v.dot(&(&g * v));
    let p = w.dot(v);
    match *kind {
        FlowKind::Kropina => (-p > TOL_ADM).then(|| kropina_formula(q, p)),
        FlowKind::Randers { eps, family } => Some(randers_parts(eps, q, family.omega_scale(eps) * p).0),
    }
}

/// Finsler norm with its gradients in the vector and point slots.
pub(crate) struct NormGrad {
    pub value: f64,
    pub dv: DVector<f64>,
    pub dx: DVector<f64>,
}

pub(crate) fn norm_with_gradients(
    model: &ManifoldModel,
    kind: &FlowKind,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Option<NormGrad> {
    let geo = model.geometry();
    let g = geo.metric(x);
    let scale = kind.omega_scale();
    let w = geo.one_form(x) * scale;
    let jg = geo.metric_jet(x);
    let jw = geo.one_form_jet(x) * scale;
    let gv = &g * v;
    let q = v.dot(&gv);
    let p = w.dot(v);
    let ql = DVector::from_iterator(v.len(), jg.iter().map(|gl| v.dot(&(gl * v))));
    let pl = &jw * v;
    match *kind {
        FlowKind::Kropina => {
            if -p <= TOL_ADM {
                return None;
            }
            let value = kropina_formula(q, p);
            let dv = -&gv / p + &w * (q / (2.0 * p * p));
            let dx = -&ql / (2.0 * p) + pl * (q / (2.0 * p * p));
            Some(NormGrad { value, dv, dx })
        }
        FlowKind::Randers { eps, .. } => {
            let (value, r) = randers_parts(eps, q, p);
            if r == 0.0 {
                return None;
            }
            let dv = gv / r + &w * (value / r);
            let dx = ql / (2.0 * r) + pl * (value / r);
            Some(NormGrad { value, dv, dx })
        }
    }
}

fn check_kind(kind: &FlowKind) -> Result<()> {
    if let FlowKind::Randers { eps, .. } = kind {
        check_eps("geodesic_flow::path_length", *eps)?;
    }
    Ok(())
}

/// Romberg extrapolation of uniform samples over `[0, span]`; `None` unless the
/// number of intervals is a power of two.
pub fn romberg(values: &[f64], span: f64) -> Option<f64> {
    let n = values.len().checked_sub(1)?;
    if n == 0 || !n.is_power_of_two() {
        return None;
    }
    let levels = n.trailing_zeros() as usize;
    let mut table: Vec<f64> = Vec::with_capacity(levels + 1);
    for lvl in 0..=levels {
        let stride = n >> lvl;
        let h = span / (1usize << lvl) as f64;
        let mut sum = 0.5 * (values[0] + values[n]);
        let mut k = stride;
        while k < n {
            sum += values[k];
            k += stride;
        }
        table.push(sum * h);
    }
    // in-place Richardson over the trapezoid column
    for j in 1..=levels {
        let f = 4f64.powi(j as i32);
        for i in (j..=levels).rev() {
            table[i] = (f * table[i] - table[i - 1]) / (f - 1.0);
        }
    }
    Some(table[levels])
}

/// Integral of uniformly sampled values over `[0, span]`.
fn uniform_integral(values: &[f64], span: f64) -> f64 {
    if let Some(r) = romberg(values, span) {
        return r;
    }
    let n = values.len() - 1;
    let h = span / n as f64;
    if n % 2 == 0 {
        let mut s = values[0] + values[n];
        for (k, v) in values.iter().enumerate().take(n).skip(1) {
            s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        s * h / 3.0
    } else {
        h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n]))
    }
}

fn trapezoid(params: &[f64], values: &[f64]) -> f64 {
    params.windows(2).zip(values.windows(2)).map(|(p, v)| 0.5 * (p[1] - p[0]) * (v[0] + v[1])).sum()
}

/// Integral of `integrand(x, v)` along the path, by the rule matching its representation.
fn integrate_path<F>(path: &DiscretePath, chord_weight: impl Fn(f64) -> f64, integrand: F) -> Result<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Option<f64>,
{
    if let Some(vel) = &path.velocities {
        let mut vals = Vec::with_capacity(path.len());
        for (k, (x, v)) in path.points.iter().zip(vel).enumerate() {
            vals.push(integrand(x, v).ok_or(Error::InadmissiblePath { op: "geodesic_flow::path_length", segment: k })?);
        }
        return Ok(if path.closed {
            vals.iter().sum::<f64>() / vals.len() as f64
        } else if path.has_uniform_params() {
            uniform_integral(&vals, path.params[path.len() - 1] - path.params[0])
        } else {
            trapezoid(&path.params, &vals)
        });
    }
    let mut total = 0.0;
    for k in 0..path.segment_count() {
        let (a, d, ds) = path.segment(k);
        let mut seg = 0.0;
        for (t, wt) in GAUSS3 {
            let x = &a + &d * t;
            seg += wt * integrand(&x, &d).ok_or(Error::InadmissiblePath { op: "geodesic_flow::path_length", segment: k })?;
        }
        total += chord_weight(ds) * seg;
    }
    Ok(total)
}

/// Finsler length of the path (`K` or `F_eps`).
pub fn path_length(model: &ManifoldModel, kind: &FlowKind, path: &DiscretePath) -> Result<f64> {
    check_kind(kind)?;
    integrate_path(path, |_| 1.0, |x, v| local_norm(model, kind, x, v))
}

/// Kropina energy `int K(x')^2 / 2 ds`.
pub fn path_energy(model: &ManifoldModel, path: &DiscretePath) -> Result<f64> {
    // along a chord the velocity is d / ds, so K^2 / 2 ds = K(d)^2 / (2 ds)
    integrate_path(path, |ds| 1.0 / ds, |x, v| local_norm(model, &FlowKind::Kropina, x, v).map(|k| 0.5 * k * k))
}

/// Riemannian energy `int g0(x', x') / 2 ds`.
pub fn riemannian_energy(model: &ManifoldModel, path: &DiscretePath) -> Result<f64> {
    let geo = model.geometry();
    integrate_path(path, |ds| 1.0 / ds, |x, v| Some(0.5 * v.dot(&(geo.metric(x) * v))))
}

/// Smallest normalized cone margin `-omega(d) / |d|` over the Gauss nodes and
/// endpoints of every chord (or over velocity samples).
pub fn admissibility_margin(model: &ManifoldModel, path: &DiscretePath) -> f64 {
    let geo = model.geometry();
    let margin = |x: &DVector<f64>, v: &DVector<f64>| {
        let g = geo.metric(x);
        let norm = v.dot(&(&g * v)).sqrt();
        if norm == 0.0 {
            return f64::NEG_INFINITY;
        }
        -geo.one_form(x).dot(v) / norm
    };
    if let Some(vel) = &path.velocities {
        return path.points.iter().zip(vel).map(|(x, v)| margin(x, v)).fold(f64::INFINITY, f64::min);
    }
    let mut worst = f64::INFINITY;
    for k in 0..path.segment_count() {
        let (a, d, _) = path.segment(k);
        for t in [0.0, GAUSS3[0].0, 0.5, GAUSS3[2].0, 1.0] {
            worst = worst.min(margin(&(&a + &d * t), &d));
        }
    }
    worst
}

pub fn is_admissible(model: &ManifoldModel, path: &DiscretePath) -> bool {
    admissibility_margin(model, path) > TOL_ADM
}
