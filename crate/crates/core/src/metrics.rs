//! Pointwise evaluation of the Kropina metric, its fundamental tensor, the
//! approximating Randers family and critical-wind Zermelo data.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Geometry, ManifoldModel};

/// Admissibility gate: `v` is admissible iff `-omega(v) > TOL_ADM`.
pub const TOL_ADM: f64 = 1e-12;

/// A chart point with a tangent vector and its cached `omega(v)`, `g0(v, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointVector {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    omega_v: f64,
    g_vv: f64,
}

impl PointVector {
    pub fn new(model: &ManifoldModel, x: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        model.check_point("metrics::point_vector", &x)?;
        if v.len() != model.dim() {
            return Err(Error::Invalid { op: "metrics::point_vector", what: "vector dimension mismatch".into() });
        }
        let g = model.geometry().metric(&x);
        let w = model.geometry().one_form(&x);
        let omega_v = w.dot(&v);
        let g_vv = v.dot(&(&g * &v));
        Ok(PointVector { x, v, omega_v, g_vv })
    }

    pub fn from_slices(model: &ManifoldModel, x: &[f64], v: &[f64]) -> Result<Self> {
        Self::new(model, DVector::from_column_slice(x), DVector::from_column_slice(v))
    }

    pub fn omega_v(&self) -> f64 {
        self.omega_v
    }

    pub fn g_vv(&self) -> f64 {
        self.g_vv
    }

    pub fn is_admissible(&self) -> bool {
        -self.omega_v > TOL_ADM
    }
}

/// Which one-form enters the Randers approximation: `omega` itself, or
/// `sqrt(1 - eps) * omega` (the rotationally perturbed sphere family).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RandersFamily {
    #[default]
    Standard,
    Katok,
}

impl RandersFamily {
    /// Factor multiplying `omega` at parameter `eps`.
    pub fn omega_scale(self, eps: f64) -> f64 {
        match self {
            RandersFamily::Standard => 1.0,
            RandersFamily::Katok => (1.0 - eps).max(0.0).sqrt(),
        }
    }
}

pub(crate) fn check_eps(op: &'static str, eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange { op, what: format!("eps = {eps} not in (0, 1]") })
    }
}

/// `K = -Q / (2P)` with `Q = g(v, v)` and `P = omega(v)`; no admissibility gate.
#[inline]
pub(crate) fn kropina_formula(q: f64, p: f64) -> f64 {
    -q / (2.0 * p)
}

/// Randers pieces at `(Q, P)` where `P` is already scaled:
/// returns `(F, R)` with `R = sqrt(eps Q + P^2)` and `F = (R + P) / eps`,
/// evaluated without cancellation on either side of the cone.
#[inline]
pub(crate) fn randers_parts(eps: f64, q: f64, p: f64) -> (f64, f64) {
    let r = (eps * q + p * p).sqrt();
    if q == 0.0 && p == 0.0 {
        return (0.0, 0.0);
    }
    let f = if p <= 0.0 { q / (r - p) } else { (r + p) / eps };
    (f, r)
}

/// Gradient of `K` with respect to the vector at fixed point.
pub(crate) fn kropina_grad_v(g: &DMatrix<f64>, w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let gv = g * v;
    let q = v.dot(&gv);
    let p = w.dot(v);
    -&gv / p + w * (q / (2.0 * p * p))
}

/// Hessian of `1/2 K^2` in the vector variable, in closed form.
pub(crate) fn kropina_hessian(g: &DMatrix<f64>, w: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let gv = g * v;
    let q = v.dot(&gv);
    let p = w.dot(v);
    let k = kropina_formula(q, p);
    let dk = kropina_grad_v(g, w, v);
    let d2k = -g / p + (&gv * w.transpose() + w * gv.transpose()) / (p * p) - (w * w.transpose()) * (q / (p * p * p));
    &dk * dk.transpose() + d2k * k
}

pub fn kropina_value(model: &ManifoldModel, pv: &PointVector) -> Result<f64> {
    if !pv.is_admissible() {
        return Err(Error::InadmissibleVector { op: "metrics::kropina_value", margin: -pv.omega_v });
    }
    debug_assert_eq!(pv.x.len(), model.dim());
    Ok(kropina_formula(pv.g_vv, pv.omega_v))
}

/// The rational expression `-g0(v,v) / (2 omega(v))` evaluated without the cone gate.
pub fn kropina_formula_unchecked(pv: &PointVector) -> f64 {
    kropina_formula(pv.g_vv, pv.omega_v)
}

/// Fundamental tensor `g_v`, the Hessian of `1/2 K^2` at `v`.
pub fn fundamental_tensor(model: &ManifoldModel, pv: &PointVector) -> Result<DMatrix<f64>> {
    if !pv.is_admissible() {
        return Err(Error::InadmissibleVector { op: "metrics::fundamental_tensor", margin: -pv.omega_v });
    }
    let g = model.geometry().metric(&pv.x);
    let w = model.geometry().one_form(&pv.x);
    Ok(kropina_hessian(&g, &w, &pv.v))
}

/// Randers norm `F_eps(v) = (sqrt(eps g0(v,v) + s^2 omega(v)^2) + s omega(v)) / eps`,
/// with `s = 1` for the standard family and `s = sqrt(1 - eps)` for the Katok family.
pub fn randers_value(model: &ManifoldModel, eps: f64, family: RandersFamily, pv: &PointVector) -> Result<f64> {
    check_eps("metrics::randers_value", eps)?;
    let _ = model;
    let p = family.omega_scale(eps) * pv.omega_v;
    Ok(randers_parts(eps, pv.g_vv, p).0)
}

/// Randers norm from Zermelo data `(h, W)`: `(sqrt(lambda h(v,v) + h(W,v)^2) - h(W,v)) / lambda`
/// with `lambda = 1 - h(W, W)`.
pub fn zermelo_randers_value(h: &DMatrix<f64>, wind: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let hw = h * wind;
    let lambda = 1.0 - wind.dot(&hw);
    let hwv = hw.dot(v);
    let hvv = v.dot(&(h * v));
    let root = (lambda * hvv + hwv * hwv).sqrt();
    if hwv >= 0.0 {
        hvv / (root + hwv)
    } else {
        (root - hwv) / lambda
    }
}

/// Zermelo data `(h_eps, W_eps)` generating the Katok-family Randers metric of `model`:
/// `h_eps = g0 / (eps + (1 - eps) |omega|^2)`, `W_eps = -sqrt(1 - eps) omega^sharp`.
pub fn katok_zermelo_data(model: &ManifoldModel, eps: f64, x: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_eps("metrics::katok_zermelo_data", eps)?;
    let g = model.metric_at(x)?;
    let w = model.one_form_at(x)?;
    let w_sharp = model.sharp(x, &w)?;
    let norm2 = w.dot(&w_sharp);
    let h = g / (eps + (1.0 - eps) * norm2);
    Ok((h, -w_sharp * (1.0 - eps).sqrt()))
}

pub type WindField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Navigation data: a sea metric (taken from `sea`) and a wind field `W`.
#[derive(Clone)]
pub struct ZermeloData {
    pub sea: ManifoldModel,
    pub wind: WindField,
}

impl fmt::Debug for ZermeloData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ZermeloData").field("sea", &self.sea).finish_non_exhaustive()
    }
}

/// Tolerance on `|W| = 1` accepted by [`kropina_from_wind`].
pub const CRITICAL_WIND_TOL: f64 = 1e-6;

impl ZermeloData {
    pub fn new(sea: ManifoldModel, wind: WindField) -> Self {
        ZermeloData { sea, wind }
    }

    /// Wind `W = omega^sharp` of a model, so that `omega = g0(W, .)`.
    pub fn from_one_form(model: &ManifoldModel) -> Self {
        let m = model.clone();
        let wind: WindField = Arc::new(move |x: &DVector<f64>| {
            let g = m.geometry().metric(x);
            let w = m.geometry().one_form(x);
            g.cholesky().map(|c| c.solve(&w)).unwrap_or(w)
        });
        ZermeloData { sea: model.clone(), wind }
    }

    /// Largest deviation of `|W|_{g0}` from 1 over the sample points.
    pub fn criticality_defect(&self, samples: &[DVector<f64>]) -> Result<(f64, Option<DVector<f64>>)> {
        let mut worst = (0.0, None);
        for x in samples {
            let g = self.sea.metric_at(x)?;
            let w = (self.wind)(x);
            let dev = (w.dot(&(&g * &w)).sqrt() - 1.0).abs();
            if dev > worst.0 {
                worst = (dev, Some(x.clone()));
            }
        }
        Ok(worst)
    }
}

struct WindGeometry {
    base: Arc<dyn Geometry>,
    wind: WindField,
}

impl fmt::Debug for WindGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WindGeometry").field("base", &self.base).finish_non_exhaustive()
    }
}

impl Geometry for WindGeometry {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.base.metric(x)
    }

    fn one_form(&self, x: &DVector<f64>) -> DVector<f64> {
        self.base.metric(x) * (self.wind)(x)
    }

    fn metric_jet(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.base.metric_jet(x)
    }

    fn killing(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.base.killing(x)
    }
}

/// Kropina model `K(v) = -g0(v,v) / (2 g0(W, v))` of critical-wind data, checked on
/// `samples` (the chart sampling grid when empty).
pub fn kropina_from_wind(zd: &ZermeloData, samples: &[DVector<f64>]) -> Result<ManifoldModel> {
    let op = "metrics::kropina_from_wind";
    let probes: Vec<DVector<f64>> = if samples.is_empty() {
        default_probes(&zd.sea, 5)
    } else {
        samples.to_vec()
    };
    let (dev, at) = zd.criticality_defect(&probes)?;
    if dev > CRITICAL_WIND_TOL {
        let at = at.expect("a deviation implies a witness point");
        let g = zd.sea.geometry().metric(&at);
        let w = (zd.wind)(&at);
        return Err(Error::NotCriticalWind { op, norm: w.dot(&(g * &w)).sqrt(), point: at.as_slice().to_vec() });
    }
    let geometry = WindGeometry { base: zd.sea.geometry().clone(), wind: zd.wind.clone() };
    ManifoldModel::new(format!("{}_wind", zd.sea.name()), Arc::new(geometry), zd.sea.domain().clone())
}

/// Tensor grid of `per_axis^dim` points inside the guarded chart box (capped at 4096).
pub(crate) fn default_probes(model: &ManifoldModel, per_axis: usize) -> Vec<DVector<f64>> {
    let n = model.dim();
    let (lo, hi) = model.domain().sampling_box(1.0);
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(n as u32).min(4096);
    (0..total)
        .map(|mut idx| {
            DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    let t = (k as f64 + 0.5) / per_axis as f64;
                    lo[i] + t * (hi[i] - lo[i])
                }),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::BuiltinGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_dx() -> ManifoldModel {
        ManifoldModel::builtin(BuiltinGeometry::flat(&[-1.0, 0.0]))
    }

    fn pv(model: &ManifoldModel, x: &[f64], v: &[f64]) -> PointVector {
        PointVector::from_slices(model, x, v).unwrap()
    }

    #[test]
    fn kropina_flat_values() {
        let m = flat_dx();
        assert_eq!(kropina_value(&m, &pv(&m, &[0.0, 0.0], &[1.0, 0.0])).unwrap(), 0.5);
        assert_eq!(kropina_value(&m, &pv(&m, &[0.0, 0.0], &[1.0, 1.0])).unwrap(), 1.0);
        // W = (-1, 0): unit indicatrix is the unit circle centred at -W
        let v = [2.0, 0.0];
        assert_eq!(kropina_value(&m, &pv(&m, &[0.3, 0.1], &v)).unwrap(), 1.0);
        assert_eq!(((v[0] - 1.0f64).powi(2) + v[1] * v[1]).sqrt(), 1.0);
    }

    #[test]
    fn inadmissible_vectors_are_rejected() {
        let m = flat_dx();
        for v in [[0.0, 1.0], [-1.0, 0.0], [-1e-13, 1.0]] {
            let p = pv(&m, &[0.0, 0.0], &v);
            assert!(matches!(kropina_value(&m, &p), Err(Error::InadmissibleVector { .. })));
            assert!(fundamental_tensor(&m, &p).is_err());
        }
    }

    #[test]
    fn randers_flat_values() {
        let m = flat_dx();
        let p = pv(&m, &[0.0, 0.0], &[1.0, 0.0]);
        let f1 = randers_value(&m, 1.0, RandersFamily::Standard, &p).unwrap();
        assert!((f1 - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        let f = randers_value(&m, 0.01, RandersFamily::Standard, &p).unwrap();
        assert!((f - (1.01f64.sqrt() - 1.0) / 0.01).abs() < 1e-13);
        assert!((f - 0.498756).abs() < 1e-6);
        assert!((f - 0.5).abs() < 0.01 * 0.5);
        let back = pv(&m, &[0.0, 0.0], &[-1.0, 0.0]);
        let fb = randers_value(&m, 1.0, RandersFamily::Standard, &back).unwrap();
        assert!((fb - (2f64.sqrt() + 1.0)).abs() < 1e-14);
        assert!(randers_value(&m, 0.0, RandersFamily::Standard, &p).is_err());
        assert!(randers_value(&m, 1.5, RandersFamily::Standard, &p).is_err());
        let zero = pv(&m, &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(randers_value(&m, 0.5, RandersFamily::Standard, &zero).unwrap(), 0.0);
    }

    #[test]
    fn randers_stable_branch_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let eps: f64 = rng.gen_range(0.05..1.0);
            let q: f64 = rng.gen_range(0.0..3.0);
            let p: f64 = rng.gen_range(-2.0..2.0);
            let naive = ((eps * q + p * p).sqrt() + p) / eps;
            let (f, _) = randers_parts(eps, q, p);
            assert!((f - naive).abs() < 1e-12 * naive.abs().max(1.0));
        }
    }

    fn random_admissible(rng: &mut ChaCha8Rng, model: &ManifoldModel) -> PointVector {
        let (lo, hi) = model.domain().sampling_box(2.0);
        loop {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
            let v: Vec<f64> = (0..model.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = PointVector::from_slices(model, &x, &v).unwrap();
            if -p.omega_v() > 1e-2 * p.g_vv().sqrt() {
                return p;
            }
        }
    }

    fn builtins() -> Vec<ManifoldModel> {
        vec![
            flat_dx(),
            ManifoldModel::builtin(BuiltinGeometry::heisenberg()),
            ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(2)),
            ManifoldModel::builtin(BuiltinGeometry::torus(&[-0.7, 0.4])),
        ]
    }

    #[test]
    fn fundamental_tensor_homogeneity_and_definiteness() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in builtins() {
            for _ in 0..100 {
                let p = random_admissible(&mut rng, &m);
                let k = kropina_value(&m, &p).unwrap();
                let gv = fundamental_tensor(&m, &p).unwrap();
                let vv = p.v.dot(&(&gv * &p.v));
                assert!((vv - k * k).abs() < 1e-8 * (1.0 + k * k), "{vv} vs {}", k * k);
                assert!((&gv - gv.transpose()).amax() < 1e-12 * gv.amax());
                let min_eig = gv.symmetric_eigenvalues().min();
                assert!(min_eig > 0.0, "min eigenvalue {min_eig}");
            }
        }
    }

    #[test]
    fn fundamental_tensor_matches_finite_differences() {
        // Hessian of 1/2 K^2 by central differences, errors compared at h and h/2.
        let m = ManifoldModel::builtin(BuiltinGeometry::heisenberg());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_admissible(&mut rng, &m);
            let exact = fundamental_tensor(&m, &p).unwrap();
            let half_k2 = |v: &DVector<f64>| {
                let q = PointVector::new(&m, p.x.clone(), v.clone()).unwrap();
                0.5 * kropina_value(&m, &q).unwrap().powi(2)
            };
            let fd = |h: f64| {
                let n = m.dim();
                DMatrix::from_fn(n, n, |i, j| {
                    let e = |k: usize, s: f64| {
                        let mut d = DVector::zeros(n);
                        d[k] = s;
                        d
                    };
                    let v = &p.v;
                    (half_k2(&(v + e(i, h) + e(j, h))) - half_k2(&(v + e(i, h) - e(j, h)))
                        - half_k2(&(v - e(i, h) + e(j, h)))
                        + half_k2(&(v - e(i, h) - e(j, h))))
                        / (4.0 * h * h)
                })
            };
            let scale = p.v.norm();
            let e1 = (fd(1e-2 * scale) - &exact).amax();
            let e2 = (fd(5e-3 * scale) - &exact).amax();
            assert!(e2 < 1e-4 * exact.amax() || e1 / e2 > 3.0, "ratio {}", e1 / e2);
        }
    }

    #[test]
    fn homogeneity_reversal_and_monotone_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in builtins() {
            for _ in 0..100 {
                let p = random_admissible(&mut rng, &m);
                let k = kropina_value(&m, &p).unwrap();
                let lam: f64 = rng.gen_range(0.1..10.0);
                let scaled = PointVector::new(&m, p.x.clone(), &p.v * lam).unwrap();
                assert!((kropina_value(&m, &scaled).unwrap() - lam * k).abs() < 1e-12 * lam * k);
                let reversed = PointVector::new(&m, p.x.clone(), -&p.v).unwrap();
                assert!(!reversed.is_admissible());
                assert!((kropina_formula_unchecked(&reversed) + k).abs() < 1e-12 * k);
                for eps in [1.0, 0.3, 0.1, 0.01, 1e-4] {
                    for family in [RandersFamily::Standard, RandersFamily::Katok] {
                        let f = randers_value(&m, eps, family, &p).unwrap();
                        let fs = randers_value(&m, eps, family, &scaled).unwrap();
                        assert!((fs - lam * f).abs() < 1e-12 * lam * f.max(1e-300));
                        if family == RandersFamily::Standard {
                            assert!(f <= k * (1.0 + 1e-14), "F_eps = {f} > K = {k}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn randers_converges_to_kropina() {
        let m = ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(2));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let p = random_admissible(&mut rng, &m);
            let k = kropina_value(&m, &p).unwrap();
            let mut prev = f64::INFINITY;
            for eps in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6] {
                let err = (randers_value(&m, eps, RandersFamily::Standard, &p).unwrap() - k).abs();
                assert!(err <= prev);
                prev = err;
            }
            assert!(prev < 1e-4 * k.max(1.0) * (1.0 + p.g_vv() / p.omega_v().powi(2)));
        }
    }

    #[test]
    fn wind_models_match_one_form_models() {
        let flat = flat_dx();
        let sea = ManifoldModel::builtin(BuiltinGeometry::flat(&[0.0, 0.0]));
        let wind: WindField = Arc::new(|_x: &DVector<f64>| DVector::from_vec(vec![-1.0, 0.0]));
        let zd = ZermeloData::new(sea.clone(), wind);
        let probes: Vec<_> = (0..10).map(|i| DVector::from_vec(vec![i as f64, -(i as f64)])).collect();
        let km = kropina_from_wind(&zd, &probes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let p = random_admissible(&mut rng, &flat);
            let q = PointVector::new(&km, p.x.clone(), p.v.clone()).unwrap();
            assert_eq!(kropina_value(&flat, &p).unwrap(), kropina_value(&km, &q).unwrap());
        }
        let weak: WindField = Arc::new(|_x: &DVector<f64>| DVector::from_vec(vec![-0.9, 0.0]));
        let err = kropina_from_wind(&ZermeloData::new(sea, weak), &probes).unwrap_err();
        assert!(matches!(err, Error::NotCriticalWind { .. }));
    }

    #[test]
    fn hopf_wind_cone_and_indicatrix() {
        let m = ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(2));
        let zd = ZermeloData::from_one_form(&m);
        let km = kropina_from_wind(&zd, &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let p = random_admissible(&mut rng, &m);
            let hopf = m.geometry().killing(&p.x).unwrap();
            let g = m.geometry().metric(&p.x);
            // admissible iff g0(V, v) > 0 for omega = -g0(V, .)
            assert!(hopf.dot(&(&g * &p.v)) > 0.0);
            let q = PointVector::new(&km, p.x.clone(), p.v.clone()).unwrap();
            let k = kropina_value(&km, &q).unwrap();
            // unit vector u = v / K satisfies |u + W| = 1 with W = omega^sharp
            let u = &p.v / k;
            let wind = (zd.wind)(&p.x);
            let s = &u + &wind;
            assert!((s.dot(&(&g * &s)).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn katok_zermelo_data_reproduces_family() {
        let models = [
            ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(2)),
            ManifoldModel::builtin(BuiltinGeometry::heisenberg()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for m in &models {
            for _ in 0..50 {
                let p = random_admissible(&mut rng, m);
                let eps: f64 = rng.gen_range(0.01..1.0);
                let v = DVector::from_iterator(m.dim(), (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)));
                let q = PointVector::new(m, p.x.clone(), v.clone()).unwrap();
                let (h, w) = katok_zermelo_data(m, eps, &p.x).unwrap();
                let a = zermelo_randers_value(&h, &w, &v);
                let b = randers_value(m, eps, RandersFamily::Katok, &q).unwrap();
                assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
            }
        }
    }
}
