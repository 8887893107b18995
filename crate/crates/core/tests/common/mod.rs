#![allow(dead_code)]

use kropina_nav::geodesic_flow::DiscretePath;
use kropina_nav::manifold::{BuiltinGeometry, ManifoldModel};
use nalgebra::DVector;
use rand::Rng;

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn model(b: BuiltinGeometry) -> ManifoldModel {
    ManifoldModel::builtin(b)
}

/// Every builtin family, in low dimension.
pub fn builtins() -> Vec<ManifoldModel> {
    vec![
        model(BuiltinGeometry::flat(&[-1.0, 0.0])),
        model(BuiltinGeometry::flat(&[0.3, 0.0, -1.0])),
        model(BuiltinGeometry::heisenberg()),
        model(BuiltinGeometry::HeisenbergContact { sign: 1.0 }),
        model(BuiltinGeometry::hopf_sphere(2)),
        model(BuiltinGeometry::hopf_sphere(3)),
        model(BuiltinGeometry::torus(&[-1.0, 0.5])),
    ]
}

/// Uniform point in the central 70% of the chart sampling box.
pub fn point(m: &ManifoldModel, rng: &mut impl Rng) -> DVector<f64> {
    let (lo, hi) = m.domain().sampling_box(1.0);
    DVector::from_iterator(
        m.dim(),
        lo.iter().zip(&hi).map(|(l, h)| l + (h - l) * rng.gen_range(0.15..0.85)),
    )
}

/// Admissible vector `-omega^# / |omega| + 0.8 u` with `|u|_g <= 1`, so
/// `omega(v) <= -0.2 |omega|`.
pub fn admissible(m: &ManifoldModel, x: &DVector<f64>, rng: &mut impl Rng) -> DVector<f64> {
    let g = m.metric_at(x).unwrap();
    let w = m.one_form_at(x).unwrap();
    let sharp = m.sharp(x, &w).unwrap();
    let wn = w.dot(&sharp).sqrt();
    let r = DVector::from_iterator(m.dim(), (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)));
    let rn = r.dot(&(&g * &r)).sqrt().max(1e-12);
    let scale = rng.gen_range(0.0..0.8);
    -sharp / wn + r * (scale / rn)
}

/// Random admissible polyline of `segments` chords of Riemannian length about `step`.
pub fn admissible_polyline(m: &ManifoldModel, segments: usize, step: f64, rng: &mut impl Rng) -> Option<DiscretePath> {
    let mut pts = vec![point(m, rng)];
    for _ in 0..segments {
        let x = pts.last().unwrap().clone();
        let d = admissible(m, &x, rng);
        let g = m.metric_at(&x).unwrap();
        let len = d.dot(&(&g * &d)).sqrt();
        let y = &x + d * (step / len);
        if m.check_guarded("test", &y).is_err() {
            return None;
        }
        pts.push(y);
    }
    let p = DiscretePath::polyline(pts).ok()?;
    kropina_nav::geodesic_flow::is_admissible(m, &p).then_some(p)
}
