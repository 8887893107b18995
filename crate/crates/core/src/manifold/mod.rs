//! Chart-based manifold models: a Riemannian metric `g0`, a one-form `omega`,
//! their first derivatives and an optional Killing field, all in a single chart.

mod builtin;
mod spec;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use builtin::BuiltinGeometry;
pub use spec::{BuiltinRef, BuiltinSpec, ExpressionGeometry, ExpressionSpec, ManifoldSpec};

/// Step used by the finite-difference jets of user-supplied geometries.
pub const FD_STEP: f64 = 1e-5;
/// Below this g0-norm the one-form is treated as vanishing.
pub const DEFAULT_TOL_OMEGA: f64 = 1e-9;
/// Default width of the band excluded around chart singularities.
pub const DEFAULT_GUARD: f64 = 1e-3;

/// Box (or periodic box) in which chart coordinates live.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periodic: Vec<bool>,
    /// Width of the singular band at each non-periodic bound; zero for plain boxes.
    pub guard: Vec<f64>,
}

impl ChartDomain {
    pub fn unbounded(dim: usize) -> Self {
        ChartDomain {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            periodic: vec![false; dim],
            guard: vec![0.0; dim],
        }
    }

    pub fn torus(periods: &[f64]) -> Self {
        let dim = periods.len();
        ChartDomain {
            lower: vec![0.0; dim],
            upper: periods.to_vec(),
            periodic: vec![true; dim],
            guard: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn period(&self, axis: usize) -> Option<f64> {
        self.periodic[axis].then(|| self.upper[axis] - self.lower[axis])
    }

    /// True when every non-periodic axis is bounded.
    pub fn is_compact(&self) -> bool {
        (0..self.dim()).all(|i| self.periodic[i] || (self.lower[i].is_finite() && self.upper[i].is_finite()))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, &xi)| {
                xi.is_finite() && (self.periodic[i] || (xi >= self.lower[i] && xi <= self.upper[i]))
            })
    }

    pub fn in_guard(&self, x: &[f64]) -> bool {
        x.iter().enumerate().any(|(i, &xi)| {
            !self.periodic[i]
                && self.guard[i] > 0.0
                && (xi < self.lower[i] + self.guard[i] || xi > self.upper[i] - self.guard[i])
        })
    }

    /// Coordinate difference `b - a`, reduced to the nearest image on periodic axes.
    pub fn delta(&self, a: &[f64], b: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            a.len(),
            (0..a.len()).map(|i| {
                let mut d = b[i] - a[i];
                if let Some(p) = self.period(i) {
                    d -= p * (d / p).round();
                }
                d
            }),
        )
    }

    /// Euclidean chart distance between two points, modulo periods.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.delta(a, b).norm()
    }

    /// Guarded interior box used for sampling (infinite bounds replaced by `fallback`).
    pub fn sampling_box(&self, fallback: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let (mut l, mut h) = (self.lower[i], self.upper[i]);
            if !l.is_finite() {
                l = -fallback;
            }
            if !h.is_finite() {
                h = fallback;
            }
            if !self.periodic[i] {
                l += self.guard[i];
                h -= self.guard[i];
            }
            lo.push(l);
            hi.push(h);
        }
        (lo, hi)
    }
}

/// Pointwise geometric data of a model. Implementors supply the metric and the
/// one-form; derivative jets default to fourth-order central differences.
pub trait Geometry: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn one_form(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `jet[l][(i, j)] = d_l g_ij`.
    fn metric_jet(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        (0..n)
            .map(|l| central_difference(x, l, FD_STEP, |y| self.metric(y)))
            .collect()
    }

    /// `jet[(l, i)] = d_l omega_i`.
    fn one_form_jet(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut jet = DMatrix::zeros(n, n);
        for l in 0..n {
            let d = central_difference(x, l, FD_STEP, |y| self.one_form(y));
            jet.row_mut(l).copy_from(&d.transpose());
        }
        jet
    }

    fn killing(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

/// Fourth-order central difference of `f` along coordinate `axis`.
pub fn central_difference<T, F>(x: &DVector<f64>, axis: usize, h: f64, f: F) -> T
where
    F: Fn(&DVector<f64>) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let shifted = |k: f64| {
        let mut y = x.clone();
        y[axis] += k * h;
        f(&y)
    };
    let (p1, p2, m1, m2) = (shifted(1.0), shifted(2.0), shifted(-1.0), shifted(-2.0));
    (p1 * 8.0 - m1 * 8.0 + m2 - p2) * (1.0 / (12.0 * h))
}

/// Christoffel symbols of the second kind, `gamma[i][(j, k)] = Γ^i_jk`.
#[derive(Debug, Clone)]
pub struct Christoffel(pub Vec<DMatrix<f64>>);

impl Christoffel {
    /// `Γ^i_jk u^j w^k` as a vector.
    pub fn contract(&self, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|g| u.dot(&(g * w))))
    }
}

#[derive(Clone)]
pub struct ManifoldModel {
    name: String,
    geometry: Arc<dyn Geometry>,
    domain: ChartDomain,
    tol_omega: f64,
}

impl fmt::Debug for ManifoldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManifoldModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("domain", &self.domain)
            .finish()
    }
}

impl ManifoldModel {
    pub fn new(name: impl Into<String>, geometry: Arc<dyn Geometry>, domain: ChartDomain) -> Result<Self> {
        if geometry.dim() < 2 {
            return Err(Error::Invalid { op: "manifold::new", what: "dimension must be at least 2".into() });
        }
        if domain.dim() != geometry.dim() {
            return Err(Error::Invalid {
                op: "manifold::new",
                what: format!("chart domain has {} axes, geometry has {}", domain.dim(), geometry.dim()),
            });
        }
        Ok(ManifoldModel { name: name.into(), geometry, domain, tol_omega: DEFAULT_TOL_OMEGA })
    }

    pub fn builtin(b: BuiltinGeometry) -> Self {
        let domain = b.domain();
        let name = b.name();
        ManifoldModel::new(name, Arc::new(b), domain).expect("builtin geometries are well formed")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_domain(mut self, domain: ChartDomain) -> Result<Self> {
        if domain.dim() != self.dim() {
            return Err(Error::Invalid { op: "manifold::with_domain", what: "dimension mismatch".into() });
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn with_tol_omega(mut self, tol: f64) -> Self {
        self.tol_omega = tol;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    pub fn tol_omega(&self) -> f64 {
        self.tol_omega
    }

    pub fn geometry(&self) -> &Arc<dyn Geometry> {
        &self.geometry
    }

    pub fn has_killing_field(&self) -> bool {
        let (lo, hi) = self.domain.sampling_box(1.0);
        let mid = DVector::from_iterator(self.dim(), lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)));
        self.geometry.killing(&mid).is_some()
    }

    /// Domain check shared by every pointwise operation.
    pub fn check_point(&self, op: &'static str, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Invalid { op, what: format!("point has {} coordinates, expected {}", x.len(), self.dim()) });
        }
        if !self.domain.contains(x.as_slice()) {
            return Err(Error::Domain { op, point: x.as_slice().to_vec() });
        }
        Ok(())
    }

    /// Domain check plus rejection of the chart-singularity guard band.
    pub fn check_guarded(&self, op: &'static str, x: &DVector<f64>) -> Result<()> {
        self.check_point(op, x)?;
        if self.domain.in_guard(x.as_slice()) {
            return Err(Error::ChartGuard { op, point: x.as_slice().to_vec() });
        }
        Ok(())
    }

    pub fn metric_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point("manifold::metric_at", x)?;
        Ok(self.geometry.metric(x))
    }

    pub fn one_form_at(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point("manifold::one_form_at", x)?;
        Ok(self.geometry.one_form(x))
    }

    pub fn metric_jet(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_point("manifold::metric_jet", x)?;
        Ok(self.geometry.metric_jet(x))
    }

    pub fn one_form_jet(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point("manifold::one_form_jet", x)?;
        Ok(self.geometry.one_form_jet(x))
    }

    pub fn killing_at(&self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        self.check_point("manifold::killing_at", x)?;
        Ok(self.geometry.killing(x))
    }

    /// Levi-Civita symbols of `g0`.
    pub fn christoffel_at(&self, x: &DVector<f64>) -> Result<Christoffel> {
        self.check_point("manifold::christoffel_at", x)?;
        let g = self.geometry.metric(x);
        let ginv = invert_spd(&g).ok_or_else(|| Error::NotPositiveDefinite {
            op: "manifold::christoffel_at",
            point: x.as_slice().to_vec(),
        })?;
        Ok(christoffel_from(&ginv, &self.geometry.metric_jet(x)))
    }

    /// Components `(d omega)_ij = d_i omega_j - d_j omega_i`.
    pub fn d_omega_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point("manifold::d_omega_at", x)?;
        let jet = self.geometry.one_form_jet(x);
        Ok(&jet - jet.transpose())
    }

    /// Index raising with `g0`.
    pub fn sharp(&self, x: &DVector<f64>, covector: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point("manifold::sharp", x)?;
        let g = self.geometry.metric(x);
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite { op: "manifold::sharp", point: x.as_slice().to_vec() })?;
        Ok(chol.solve(covector))
    }

    /// Index lowering with `g0`.
    pub fn flat(&self, x: &DVector<f64>, vector: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point("manifold::flat", x)?;
        Ok(self.geometry.metric(x) * vector)
    }

    /// Density of `omega ∧ d omega`: zero in dimension 2, the signed coefficient of
    /// `dx1∧dx2∧dx3` in dimension 3, and the Euclidean norm of the 3-form components
    /// in higher dimension.
    pub fn omega_wedge_domega(&self, x: &DVector<f64>) -> Result<f64> {
        let n = self.dim();
        if n < 3 {
            self.check_point("manifold::omega_wedge_domega", x)?;
            return Ok(0.0);
        }
        let w = self.one_form_at(x)?;
        let big = self.d_omega_at(x)?;
        let comp = |i: usize, j: usize, k: usize| w[i] * big[(j, k)] + w[j] * big[(k, i)] + w[k] * big[(i, j)];
        if n == 3 {
            return Ok(comp(0, 1, 2));
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    sum += comp(i, j, k).powi(2);
                }
            }
        }
        Ok(sum.sqrt())
    }
}

pub(crate) fn invert_spd(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    g.clone().cholesky().map(|c| c.inverse())
}

pub(crate) fn is_positive_definite(g: &DMatrix<f64>) -> bool {
    let sym = (g - g.transpose()).amax() <= 1e-12 * g.amax().max(1.0);
    sym && g.clone().cholesky().is_some()
}

pub(crate) fn christoffel_from(ginv: &DMatrix<f64>, jet: &[DMatrix<f64>]) -> Christoffel {
    let n = ginv.nrows();
    // lowered[l][(j, k)] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
    let mut lowered = vec![DMatrix::zeros(n, n); n];
    for (l, low) in lowered.iter_mut().enumerate() {
        for j in 0..n {
            for k in 0..n {
                low[(j, k)] = 0.5 * (jet[j][(l, k)] + jet[k][(l, j)] - jet[l][(j, k)]);
            }
        }
    }
    let mut gamma = vec![DMatrix::zeros(n, n); n];
    for (i, gi) in gamma.iter_mut().enumerate() {
        for (l, low) in lowered.iter().enumerate() {
            let c = ginv[(i, l)];
            if c != 0.0 {
                *gi += low * c;
            }
        }
    }
    Christoffel(gamma)
}
