//! Second-order geodesic equations reduced to the chart.
//!
//! The spacetime route eliminates `t` from the lightlike geodesic system of
//! `g0 + omega (x) dt + dt (x) omega - eps dt^2`; the Euler–Lagrange route works
//! with the Lagrangian `K^2 / 2` directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifold::{christoffel_from, Christoffel, ManifoldModel};
use crate::metrics::{check_eps, kropina_formula, kropina_hessian, randers_parts, RandersFamily};

use super::FlowKind;

/// Metric data at one point.
pub(crate) struct Frame {
    pub g: DMatrix<f64>,
    pub ginv: DMatrix<f64>,
    pub w: DVector<f64>,
    /// `jw[(l, i)] = d_l omega_i`.
    pub jw: DMatrix<f64>,
    pub jg: Vec<DMatrix<f64>>,
    pub gamma: Christoffel,
}

impl Frame {
    pub fn at(model: &ManifoldModel, x: &DVector<f64>) -> Result<Frame> {
        let geo = model.geometry();
        let g = geo.metric(x);
        let ginv = g
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::NotPositiveDefinite { op: "geodesic_flow::spray", point: x.as_slice().to_vec() })?;
        let jg = geo.metric_jet(x);
        let gamma = christoffel_from(&ginv, &jg);
        Ok(Frame { g, ginv, w: geo.one_form(x), jw: geo.one_form_jet(x), jg, gamma })
    }

    /// The frame of the scaled form `scale * omega`.
    pub fn scale_form(mut self, scale: f64) -> Frame {
        if scale != 1.0 {
            self.w *= scale;
            self.jw *= scale;
        }
        self
    }
}

/// Acceleration together with the lift rates `t'` and `t''`.
#[derive(Debug, Clone, PartialEq)]
pub struct SprayValue {
    pub accel: DVector<f64>,
    pub tdot: f64,
    pub tddot: f64,
}

/// How the curve is parametrized while integrating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// Affine parameter of the lightlike spacetime lift; `omega(x')` (or `c_eps`) is conserved.
    #[default]
    Lightlike,
    /// Constant Finsler speed.
    ConstantSpeed,
}

pub(crate) fn spacetime_spray_in(frame: &Frame, eps: f64, v: &DVector<f64>) -> Result<SprayValue> {
    let op = "geodesic_flow::spray";
    let gv = &frame.g * v;
    let q = v.dot(&gv);
    let p = frame.w.dot(v);
    let tdot = if eps == 0.0 {
        if -p <= crate::metrics::TOL_ADM {
            return Err(Error::InadmissibleVector { op, margin: -p });
        }
        kropina_formula(q, p)
    } else {
        if q == 0.0 {
            return Err(Error::Invalid { op, what: "zero velocity".into() });
        }
        randers_parts(eps, q, p).0
    };
    let big = &frame.jw - frame.jw.transpose();
    let big_v = &big * v;
    let w_sharp = &frame.ginv * &frame.w;
    let big_sharp_v = &frame.ginv * &big_v;
    let gamma_vv = frame.gamma.contract(v, v);
    let b = v.dot(&(&frame.jw * v)) - frame.w.dot(&gamma_vv);
    let tddot = (tdot * w_sharp.dot(&big_v) + b) / (frame.w.dot(&w_sharp) + eps);
    let accel = big_sharp_v * tdot - &w_sharp * tddot - gamma_vv;
    Ok(SprayValue { accel, tdot, tddot })
}

fn guarded_frame(model: &ManifoldModel, x: &DVector<f64>, op: &'static str) -> Result<Frame> {
    model.check_guarded(op, x)?;
    Frame::at(model, x)
}

/// Spacetime-reduced spray for either kind, with lift rates.
pub fn spacetime_spray(model: &ManifoldModel, kind: &FlowKind, x: &DVector<f64>, v: &DVector<f64>) -> Result<SprayValue> {
    let frame = guarded_frame(model, x, "geodesic_flow::spray")?;
    match *kind {
        FlowKind::Kropina => spacetime_spray_in(&frame, 0.0, v),
        FlowKind::Randers { eps, family } => {
            check_eps("geodesic_flow::randers_spray", eps)?;
            spacetime_spray_in(&frame.scale_form(family.omega_scale(eps)), eps, v)
        }
    }
}

/// Kropina spray in the lightlike parametrization (`omega(x')` conserved).
pub fn kropina_spray(model: &ManifoldModel, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(spacetime_spray(model, &FlowKind::Kropina, x, v)?.accel)
}

/// Spray of the Randers metric `F_eps` in the parametrization of its lightlike lift.
pub fn randers_spray(
    model: &ManifoldModel,
    eps: f64,
    family: RandersFamily,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(spacetime_spray(model, &FlowKind::Randers { eps, family }, x, v)?.accel)
}

/// Spacetime spray reparametrized to constant Finsler speed: `a - (t''/t') v`.
pub fn constant_speed_spray(
    model: &ManifoldModel,
    kind: &FlowKind,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sv = spacetime_spray(model, kind, x, v)?;
    Ok(sv.accel - v * (sv.tddot / sv.tdot))
}

/// Geodesic spray of the Lagrangian `K^2 / 2`: solves `g_v x'' = d_x L - (d_v d_x L) v`.
pub fn euler_lagrange_spray(model: &ManifoldModel, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let op = "geodesic_flow::euler_lagrange_spray";
    let frame = guarded_frame(model, x, op)?;
    let n = v.len();
    let (g, w, jw) = (&frame.g, &frame.w, &frame.jw);
    let gv = g * v;
    let q = v.dot(&gv);
    let p = w.dot(v);
    if -p <= crate::metrics::TOL_ADM {
        return Err(Error::InadmissibleVector { op, margin: -p });
    }
    let k = kropina_formula(q, p);
    let dk_v = -&gv / p + w * (q / (2.0 * p * p));
    let jv = jw * v;
    let glv: Vec<DVector<f64>> = frame.jg.iter().map(|gl| gl * v).collect();
    let ql = DVector::from_iterator(n, glv.iter().map(|u| u.dot(v)));
    let dk_x = -&ql / (2.0 * p) + &jv * (q / (2.0 * p * p));
    let dl_x = &dk_x * k;
    // mixed[(i, l)] = d_{v_i} d_{x_l} K
    let mut mixed = DMatrix::zeros(n, n);
    for l in 0..n {
        for i in 0..n {
            mixed[(i, l)] = -glv[l][i] / p + ql[l] * w[i] / (2.0 * p * p) + gv[i] * jv[l] / (p * p)
                + q * jw[(l, i)] / (2.0 * p * p)
                - q * jv[l] * w[i] / (p * p * p);
        }
    }
    let m = &dk_v * dk_x.transpose() + mixed * k;
    let rhs = dl_x - m * v;
    let hess = kropina_hessian(g, w, v);
    hess.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::NotPositiveDefinite { op, point: x.as_slice().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::BuiltinGeometry;
    use crate::metrics::PointVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn models() -> Vec<ManifoldModel> {
        vec![
            ManifoldModel::builtin(BuiltinGeometry::flat(&[-1.0, 0.2])),
            ManifoldModel::builtin(BuiltinGeometry::heisenberg()),
            ManifoldModel::builtin(BuiltinGeometry::HeisenbergContact { sign: 1.0 }),
            ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(2)),
            ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(3)),
            ManifoldModel::builtin(BuiltinGeometry::torus(&[-0.5, 0.5])),
        ]
    }

    fn random_admissible(rng: &mut ChaCha8Rng, m: &ManifoldModel) -> (DVector<f64>, DVector<f64>) {
        let (lo, hi) = m.domain().sampling_box(1.5);
        loop {
            let x = DVector::from_iterator(m.dim(), lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(a + 0.05..b - 0.05)));
            let v = DVector::from_iterator(m.dim(), (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)));
            let pv = PointVector::new(m, x.clone(), v.clone()).unwrap();
            if -pv.omega_v() > 0.05 * pv.g_vv().sqrt() {
                return (x, v);
            }
        }
    }

    #[test]
    fn flat_sprays_vanish() {
        let m = ManifoldModel::builtin(BuiltinGeometry::flat(&[-1.0, 0.0, 0.3]));
        let x = DVector::from_vec(vec![0.3, -2.0, 1.0]);
        let v = DVector::from_vec(vec![1.0, 0.5, -0.2]);
        assert_eq!(kropina_spray(&m, &x, &v).unwrap().amax(), 0.0);
        assert_eq!(euler_lagrange_spray(&m, &x, &v).unwrap().amax(), 0.0);
        assert_eq!(randers_spray(&m, 0.3, RandersFamily::Standard, &x, &v).unwrap().amax(), 0.0);
    }

    #[test]
    fn two_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for m in models() {
            for _ in 0..100 {
                let (x, v) = random_admissible(&mut rng, &m);
                let st = constant_speed_spray(&m, &FlowKind::Kropina, &x, &v).unwrap();
                let el = euler_lagrange_spray(&m, &x, &v).unwrap();
                let scale = 1.0 + st.amax();
                assert!((&st - &el).amax() < 1e-8 * scale, "{}: {st} vs {el}", m.name());
            }
        }
    }

    #[test]
    fn riemannian_limit_when_omega_vanishes() {
        // eps = 1 and omega = 0: the lift has t' = |v| and the spray is -Gamma(v, v)
        let spec = crate::manifold::ManifoldSpec::from_json(
            r#"{"name": "s2", "dim": 2, "periodic": [false, true], "lower": [0.0, 0.0],
                "upper": [3.141592653589793, 6.283185307179586],
                "expressions": {"metric": [["1", "0"], ["0", "sin(x1)^2"]], "one_form": ["0", "0"]}}"#,
        )
        .unwrap();
        let m = spec.to_model().unwrap();
        let x = DVector::from_vec(vec![0.8, 0.3]);
        let v = DVector::from_vec(vec![0.4, -0.9]);
        let a = randers_spray(&m, 1.0, RandersFamily::Standard, &x, &v).unwrap();
        let gamma = m.christoffel_at(&x).unwrap().contract(&v, &v);
        assert!((a + gamma).amax() < 1e-9);
    }

    #[test]
    fn randers_spray_converges_to_kropina_spray() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for m in models() {
            for _ in 0..20 {
                let (x, v) = random_admissible(&mut rng, &m);
                let k = kropina_spray(&m, &x, &v).unwrap();
                let mut prev = f64::INFINITY;
                for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
                    let r = randers_spray(&m, eps, RandersFamily::Standard, &x, &v).unwrap();
                    let err = (r - &k).amax();
                    assert!(err <= prev * (1.0 + 1e-9) + 1e-13, "{}: {err} after {prev}", m.name());
                    prev = err;
                }
                assert!(prev < 1e-2 * (1.0 + k.amax()));
            }
        }
    }

    #[test]
    fn hopf_fibers_have_zero_acceleration() {
        let m = ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(2));
        let v = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        for eta in [0.2, 0.7, 1.3] {
            let x = DVector::from_vec(vec![eta, 0.3, 2.0]);
            assert!(kropina_spray(&m, &x, &v).unwrap().amax() < 1e-14);
            assert!(euler_lagrange_spray(&m, &x, &v).unwrap().amax() < 1e-13);
            for eps in [0.9, 0.75, 0.1] {
                let a = randers_spray(&m, eps, RandersFamily::Katok, &x, &v).unwrap();
                assert!(a.amax() < 1e-13, "{a}");
            }
        }
    }

    #[test]
    fn inadmissible_and_guard_errors() {
        let m = ManifoldModel::builtin(BuiltinGeometry::hopf_sphere(2));
        let x = DVector::from_vec(vec![0.5, 0.0, 0.0]);
        let back = DVector::from_vec(vec![0.0, -1.0, -1.0]);
        assert!(matches!(kropina_spray(&m, &x, &back), Err(Error::InadmissibleVector { .. })));
        let near_pole = DVector::from_vec(vec![1e-4, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        assert!(matches!(kropina_spray(&m, &near_pole, &v), Err(Error::ChartGuard { .. })));
        // Randers sprays accept any nonzero vector
        assert!(randers_spray(&m, 0.5, RandersFamily::Standard, &x, &back).is_ok());
    }
}
