//! Admissible reachable sets on a lattice, their boundary and the
//! non-integrability scan.
//!
//! Propagation is a Dijkstra search over lattice nodes anchored at the source.
//! An edge is traversable when its chord is admissible at the chord midpoint and
//! costs the Kropina length of the chord. Each relaxation also tries the chord
//! from the settled node's parent (any-angle shortcut), so straight admissible
//! chords longer than the stencil are found.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic_flow::DiscretePath;
use crate::manifold::{Geometry, ManifoldModel};
use crate::metrics::TOL_ADM;

/// Axis-aligned chart box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GridBox {
    pub fn cube(dim: usize, half: f64) -> Self {
        GridBox { lower: vec![-half; dim], upper: vec![half; dim] }
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateOptions {
    /// Lattice spacing.
    pub h: f64,
    /// Chebyshev radius of the neighbor stencil.
    pub stencil_radius: usize,
    /// Nodes with arrival cost above this stay unreached.
    pub budget: f64,
    /// Extra lattice layers searched around the box. Curves may leave the box
    /// and come back; corners of a contact box are often only reachable that way.
    pub margin: usize,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions { h: 0.05, stencil_radius: 2, budget: f64::INFINITY, margin: 4 }
    }
}

impl PropagateOptions {
    pub fn with_h(h: f64) -> Self {
        PropagateOptions { h, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ReachableSet {
    pub source: DVector<f64>,
    /// Coordinates of the lattice node with index zero.
    pub origin: Vec<f64>,
    pub h: f64,
    pub shape: Vec<usize>,
    /// Minimal chord-path Kropina length; infinite when unreached.
    pub cost: Vec<f64>,
    pub source_index: usize,
    search: Arc<Search>,
}

/// Predecessor tree over the padded search lattice.
#[derive(Debug)]
struct Search {
    origin: Vec<f64>,
    h: f64,
    shape: Vec<usize>,
    parent: Vec<usize>,
    /// Lattice offset of the reported box inside the search lattice.
    offset: Vec<usize>,
}

impl Search {
    fn point(&self, mut idx: usize) -> DVector<f64> {
        let n = self.shape.len();
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            x[i] = self.origin[i] + (idx % self.shape[i]) as f64 * self.h;
            idx /= self.shape[i];
        }
        x
    }
}

const NO_PARENT: usize = usize::MAX;

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties by index for determinism
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl ReachableSet {
    pub fn len(&self) -> usize {
        self.cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cost.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn reached(&self, idx: usize) -> bool {
        self.cost[idx].is_finite()
    }

    pub fn reached_count(&self) -> usize {
        self.cost.iter().filter(|c| c.is_finite()).count()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            out[i] = idx % self.shape[i];
            idx /= self.shape[i];
        }
        out
    }

    pub fn flat_index(&self, multi: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for (i, &k) in multi.iter().enumerate() {
            if k < 0 || k as usize >= self.shape[i] {
                return None;
            }
            idx = idx * self.shape[i] + k as usize;
        }
        Some(idx)
    }

    pub fn point(&self, idx: usize) -> DVector<f64> {
        let m = self.multi_index(idx);
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.origin[i] + m[i] as f64 * self.h))
    }

    /// Lattice node nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let multi: Vec<i64> = (0..self.dim()).map(|i| ((x[i] - self.origin[i]) / self.h).round() as i64).collect();
        self.flat_index(&multi)
    }

    /// Chord path from the source to `idx` along the search predecessors.
    /// Intermediate nodes may lie in the search margin outside the box.
    pub fn path_to(&self, idx: usize) -> Option<DiscretePath> {
        if !self.reached(idx) {
            return None;
        }
        let se = &self.search;
        let mut cur = 0usize;
        for (i, m) in self.multi_index(idx).into_iter().enumerate() {
            cur = cur * se.shape[i] + m + se.offset[i];
        }
        let mut chain = vec![cur];
        while se.parent[cur] != NO_PARENT {
            cur = se.parent[cur];
            chain.push(cur);
        }
        chain.reverse();
        if chain.len() < 2 {
            return None;
        }
        DiscretePath::polyline(chain.into_iter().map(|k| se.point(k)).collect()).ok()
    }

    /// Grid rows `i.., x.., reached, cost` in lexicographic index order.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::new();
        let idx: Vec<String> = (1..=n).map(|i| format!("i{i}")).collect();
        let xs: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let _ = writeln!(out, "{},{},reached,cost", idx.join(","), xs.join(","));
        for k in 0..self.len() {
            let m = self.multi_index(k);
            let p = self.point(k);
            let mut row: Vec<String> = m.iter().map(|v| v.to_string()).collect();
            row.extend(p.iter().map(|v| crate::cli::fmt_f64(*v)));
            row.push(if self.reached(k) { "1".into() } else { "0".into() });
            row.push(crate::cli::fmt_f64(self.cost[k]));
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

fn stencil(dim: usize, radius: usize) -> Vec<Vec<i64>> {
    let r = radius as i64;
    let side = (2 * r + 1) as usize;
    let mut out = Vec::new();
    for mut code in 0..side.pow(dim as u32) {
        let mut off = vec![0i64; dim];
        for o in off.iter_mut() {
            *o = (code % side) as i64 - r;
            code /= side;
        }
        if off.iter().any(|&o| o != 0) {
            out.push(off);
        }
    }
    out
}

/// Kropina length of the chord `a -> b`, if admissible at its midpoint.
fn chord_cost(model: &ManifoldModel, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let d = b - a;
    let m = (a + b) * 0.5;
    let dom = model.domain();
    if !dom.contains(m.as_slice()) || dom.in_guard(m.as_slice()) {
        return None;
    }
    let geo = model.geometry();
    let w = geo.one_form(&m);
    if w.amax() < model.tol_omega() {
        return None;
    }
    let g = geo.metric(&m);
    let q = d.dot(&(&g * &d));
    let p = w.dot(&d);
    (-p > TOL_ADM * q.sqrt()).then(|| q / (-2.0 * p))
}

/// Forward reachable set `I+(x)` over the lattice `x + h Z^n` inside `bbox`.
pub fn propagate(model: &ManifoldModel, x: &DVector<f64>, bbox: &GridBox, opts: &PropagateOptions) -> Result<ReachableSet> {
    let op = "reachable::propagate";
    let n = model.dim();
    if bbox.lower.len() != n || bbox.upper.len() != n || x.len() != n {
        return Err(Error::Invalid { op, what: "box and source must match the manifold dimension".into() });
    }
    if !(opts.h > 0.0) || opts.stencil_radius == 0 {
        return Err(Error::OutOfRange { op, what: "spacing and stencil radius must be positive".into() });
    }
    if !bbox.contains(x.as_slice()) {
        return Err(Error::OutOfRange { op, what: format!("source {:?} lies outside the box", x.as_slice()) });
    }
    model.check_guarded(op, x)?;
    let h = opts.h;
    let pad = opts.margin as i64;
    let mut origin = Vec::with_capacity(n);
    let mut shape = Vec::with_capacity(n);
    let mut src_multi = Vec::with_capacity(n);
    for i in 0..n {
        let kmin = ((bbox.lower[i] - x[i]) / h - 1e-9).ceil() as i64 - pad;
        let kmax = ((bbox.upper[i] - x[i]) / h + 1e-9).floor() as i64 + pad;
        origin.push(x[i] + kmin as f64 * h);
        shape.push((kmax - kmin + 1) as usize);
        src_multi.push(-kmin);
    }
    let flat = |multi: &[i64]| -> Option<usize> {
        let mut idx = 0usize;
        for (i, &k) in multi.iter().enumerate() {
            if k < 0 || k as usize >= shape[i] {
                return None;
            }
            idx = idx * shape[i] + k as usize;
        }
        Some(idx)
    };
    let multi = |mut idx: usize| -> Vec<i64> {
        let mut out = vec![0i64; n];
        for i in (0..n).rev() {
            out[i] = (idx % shape[i]) as i64;
            idx /= shape[i];
        }
        out
    };
    let point = |m: &[i64]| DVector::from_iterator(n, (0..n).map(|i| origin[i] + m[i] as f64 * h));
    let total: usize = shape.iter().product();
    let mut cost = vec![f64::INFINITY; total];
    let src = flat(&src_multi).expect("source lies in the lattice");
    cost[src] = 0.0;

    let offsets = stencil(n, opts.stencil_radius);
    let mut parent = vec![NO_PARENT; total];
    let mut done = vec![false; total];
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, src));
    while let Some(Entry(c, u)) = heap.pop() {
        if done[u] || c > cost[u] {
            continue;
        }
        done[u] = true;
        let um = multi(u);
        let xu = point(&um);
        let pu = parent[u];
        let xpu = (pu != NO_PARENT).then(|| point(&multi(pu)));
        for off in &offsets {
            let vm: Vec<i64> = um.iter().zip(off).map(|(a, b)| a + b).collect();
            let Some(v) = flat(&vm) else { continue };
            if done[v] {
                continue;
            }
            let xv = point(&vm);
            let mut best: Option<(f64, usize)> = None;
            if let Some(xp) = &xpu {
                if let Some(k) = chord_cost(model, xp, &xv) {
                    best = Some((cost[pu] + k, pu));
                }
            }
            if let Some(k) = chord_cost(model, &xu, &xv) {
                let cand = c + k;
                if best.is_none_or(|(b, _)| cand < b) {
                    best = Some((cand, u));
                }
            }
            if let Some((nc, from)) = best {
                if nc <= opts.budget && nc < cost[v] {
                    cost[v] = nc;
                    parent[v] = from;
                    heap.push(Entry(nc, v));
                }
            }
        }
    }

    // crop the margin
    let inner: Vec<usize> = shape.iter().map(|&s| s - 2 * opts.margin).collect();
    let inner_total: usize = inner.iter().product();
    let mut inner_cost = Vec::with_capacity(inner_total);
    let mut m = vec![0i64; n];
    for mut k in 0..inner_total {
        for i in (0..n).rev() {
            m[i] = (k % inner[i]) as i64 + pad;
            k /= inner[i];
        }
        inner_cost.push(cost[flat(&m).expect("inner node")]);
    }
    let inner_origin: Vec<f64> = origin.iter().map(|o| o + pad as f64 * h).collect();
    let mut source_index = 0usize;
    for i in 0..n {
        source_index = source_index * inner[i] + (src_multi[i] - pad) as usize;
    }
    Ok(ReachableSet {
        source: x.clone(),
        origin: inner_origin,
        h,
        shape: inner,
        cost: inner_cost,
        source_index,
        search: Arc::new(Search { origin, h, shape, parent, offset: vec![opts.margin; n] }),
    })
}

/// One-form `-omega` over the same metric.
#[derive(Debug)]
struct Reversed(Arc<dyn Geometry>);

impl Geometry for Reversed {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.0.metric(x)
    }

    fn one_form(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.0.one_form(x)
    }

    fn metric_jet(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.0.metric_jet(x)
    }

    fn one_form_jet(&self, x: &DVector<f64>) -> DMatrix<f64> {
        -self.0.one_form_jet(x)
    }
}

/// The same manifold with `omega` replaced by `-omega` (reversed cone).
pub fn reversed(model: &ManifoldModel) -> Result<ManifoldModel> {
    let geo: Arc<dyn Geometry> = Arc::new(Reversed(model.geometry().clone()));
    Ok(ManifoldModel::new(format!("{}_reversed", model.name()), geo, model.domain().clone())?.with_tol_omega(model.tol_omega()))
}

/// Backward set `I-(x)`: the forward set for `-omega`.
pub fn propagate_backward(model: &ManifoldModel, x: &DVector<f64>, bbox: &GridBox, opts: &PropagateOptions) -> Result<ReachableSet> {
    propagate(&reversed(model)?, x, bbox, opts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundarySample {
    pub point: Vec<f64>,
    /// Unit chart normal pointing into the reached set.
    pub normal: Vec<f64>,
    /// Angle in degrees between the normal line and `omega^sharp`, measured in `g0`.
    pub angle_deg: f64,
    /// `omega ∧ d omega` density at the sample.
    pub wedge: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangencyReport {
    pub samples: Vec<BoundarySample>,
    pub max_angle_deg: f64,
    pub mean_angle_deg: f64,
}

/// Midpoints between reached nodes and their unreached axis neighbors, with the
/// inward direction.
fn boundary_points(rs: &ReachableSet) -> Vec<(DVector<f64>, DVector<f64>)> {
    let n = rs.dim();
    let mut out = Vec::new();
    for k in 0..rs.len() {
        // the source is an isolated point of the closure, not part of the boundary
        if !rs.reached(k) || k == rs.source_index {
            continue;
        }
        let m: Vec<i64> = rs.multi_index(k).into_iter().map(|v| v as i64).collect();
        for i in 0..n {
            for s in [-1i64, 1] {
                let mut nm = m.clone();
                nm[i] += s;
                if let Some(j) = rs.flat_index(&nm) {
                    if !rs.reached(j) {
                        let (a, b) = (rs.point(k), rs.point(j));
                        out.push(((&a + &b) * 0.5, a - b));
                    }
                }
            }
        }
    }
    out
}

/// Tangent planes of the reached-set boundary by local PCA (radius `3h`),
/// compared with `ker omega`.
pub fn boundary_tangency_test(model: &ManifoldModel, rs: &ReachableSet) -> Result<TangencyReport> {
    let op = "reachable::boundary_tangency_test";
    let reached = rs.reached_count();
    if reached == rs.len() {
        return Err(Error::BoundaryEmpty { op, reason: "every lattice node is reached".into() });
    }
    if reached <= 1 {
        return Err(Error::BoundaryEmpty { op, reason: "no node besides the source is reached".into() });
    }
    let pts = boundary_points(rs);
    if pts.is_empty() {
        return Err(Error::BoundaryEmpty { op, reason: "no reached node borders an unreached one".into() });
    }
    let n = rs.dim();
    let radius = 3.0 * rs.h;
    let key = |p: &DVector<f64>| -> Vec<i64> { p.iter().map(|v| (v / radius).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, (p, _)) in pts.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let neighbor_keys = stencil(n, 1);
    let samples: Vec<BoundarySample> = (0..pts.len())
        .into_par_iter()
        .filter_map(|i| {
            let (p, _) = &pts[i];
            let base = key(p);
            let mut near: Vec<usize> = Vec::new();
            for off in neighbor_keys.iter().chain(std::iter::once(&vec![0; n])) {
                let k: Vec<i64> = base.iter().zip(off).map(|(a, b)| a + b).collect();
                if let Some(list) = buckets.get(&k) {
                    near.extend(list.iter().copied().filter(|&j: &usize| (&pts[j].0 - p).norm() <= radius));
                }
            }
            if near.len() < n {
                return None;
            }
            let centroid = near.iter().fold(DVector::zeros(n), |acc, &j| acc + &pts[j].0) / near.len() as f64;
            let mut cov = DMatrix::zeros(n, n);
            let mut inward = DVector::zeros(n);
            for &j in &near {
                let d = &pts[j].0 - &centroid;
                cov += &d * d.transpose();
                inward += &pts[j].1;
            }
            let eig = cov.symmetric_eigen();
            let imin = eig.eigenvalues.imin();
            let mut normal = eig.eigenvectors.column(imin).into_owned();
            if normal.dot(&inward) < 0.0 {
                normal = -normal;
            }
            let geo = model.geometry();
            let g = geo.metric(p);
            let ginv = g.clone().try_inverse()?;
            let w = geo.one_form(p);
            let cos = normal.dot(&(&ginv * &w)).abs() / (normal.dot(&(&ginv * &normal)) * w.dot(&(&ginv * &w))).sqrt();
            let angle_deg = cos.clamp(-1.0, 1.0).acos().to_degrees();
            let wedge = model.omega_wedge_domega(p).unwrap_or(f64::NAN);
            Some(BoundarySample { point: p.as_slice().to_vec(), normal: normal.as_slice().to_vec(), angle_deg, wedge })
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::BoundaryEmpty { op, reason: "boundary too sparse for plane fits".into() });
    }
    let max_angle_deg = samples.iter().map(|s| s.angle_deg).fold(0.0, f64::max);
    let mean_angle_deg = samples.iter().map(|s| s.angle_deg).sum::<f64>() / samples.len() as f64;
    Ok(TangencyReport { samples, max_angle_deg, mean_angle_deg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WedgeMeasure {
    /// Dimension 2: `omega ∧ d omega` vanishes identically.
    Zero,
    /// Dimension 3: the signed density.
    Density,
    /// Higher dimension: Euclidean norm of the 3-form components.
    ThreeFormNorm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub measure: WedgeMeasure,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Fraction of samples with `|value| > 1e-9`.
    pub nonzero_fraction: f64,
}

/// `omega ∧ d omega` on a `per_axis^n` grid of cell centers in `bbox`.
pub fn nonintegrability_scan(model: &ManifoldModel, bbox: &GridBox, per_axis: usize) -> Result<ScanReport> {
    let op = "reachable::nonintegrability_scan";
    let n = model.dim();
    if n < 2 || bbox.lower.len() != n || bbox.upper.len() != n || per_axis == 0 {
        return Err(Error::Invalid { op, what: "scan needs dim >= 2 and a matching box".into() });
    }
    let total = per_axis.pow(n as u32);
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; n];
            for i in (0..n).rev() {
                let k = idx % per_axis;
                idx /= per_axis;
                p[i] = bbox.lower[i] + (k as f64 + 0.5) / per_axis as f64 * (bbox.upper[i] - bbox.lower[i]);
            }
            p
        })
        .collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|p| model.omega_wedge_domega(&DVector::from_column_slice(p)))
        .collect::<Result<_>>()?;
    let nonzero = values.iter().filter(|v| v.abs() > 1e-9).count();
    let measure = match n {
        2 => WedgeMeasure::Zero,
        3 => WedgeMeasure::Density,
        _ => WedgeMeasure::ThreeFormNorm,
    };
    Ok(ScanReport { measure, points, nonzero_fraction: nonzero as f64 / values.len() as f64, values })
}
