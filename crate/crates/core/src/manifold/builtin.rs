use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{DMatrix, DVector};

use super::{ChartDomain, Geometry, DEFAULT_GUARD};

/// Geometries with closed-form jets.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinGeometry {
    /// Euclidean `R^n` with a constant one-form.
    FlatConstantForm { covector: Vec<f64> },
    /// Odd sphere `S^{2m-1}` in angular coordinates `(eta_1..eta_{m-1}, xi_1..xi_m)`
    /// with `omega = -g0(V, .)` for the unit Hopf field `V = sum d/dxi_i`.
    RoundSphereHopf { m: usize },
    /// Euclidean `R^3` with `omega = sign * (dz - y dx)`.
    HeisenbergContact { sign: f64 },
    /// Flat torus `R^n / (periods)` with a constant one-form and a constant Killing field.
    FlatTorus { covector: Vec<f64>, periods: Vec<f64>, killing: Vec<f64> },
}

impl BuiltinGeometry {
    pub fn flat(covector: &[f64]) -> Self {
        BuiltinGeometry::FlatConstantForm { covector: covector.to_vec() }
    }

    pub fn hopf_sphere(m: usize) -> Self {
        assert!(m >= 2, "S^(2m-1) needs m >= 2");
        BuiltinGeometry::RoundSphereHopf { m }
    }

    /// `omega = -(dz - y dx)`.
    pub fn heisenberg() -> Self {
        BuiltinGeometry::HeisenbergContact { sign: -1.0 }
    }

    /// Unit torus with Killing field `d/dx1`.
    pub fn torus(covector: &[f64]) -> Self {
        let n = covector.len();
        let mut killing = vec![0.0; n];
        killing[0] = 1.0;
        BuiltinGeometry::FlatTorus { covector: covector.to_vec(), periods: vec![1.0; n], killing }
    }

    pub fn name(&self) -> String {
        match self {
            BuiltinGeometry::FlatConstantForm { .. } => "flat".into(),
            BuiltinGeometry::RoundSphereHopf { m } => format!("hopf_s{}", 2 * m - 1),
            BuiltinGeometry::HeisenbergContact { .. } => "heisenberg".into(),
            BuiltinGeometry::FlatTorus { .. } => "torus".into(),
        }
    }

    pub fn domain(&self) -> ChartDomain {
        match self {
            BuiltinGeometry::FlatConstantForm { covector } => ChartDomain::unbounded(covector.len()),
            BuiltinGeometry::HeisenbergContact { .. } => ChartDomain::unbounded(3),
            BuiltinGeometry::FlatTorus { periods, .. } => ChartDomain::torus(periods),
            BuiltinGeometry::RoundSphereHopf { m } => {
                let n = 2 * m - 1;
                let mut d = ChartDomain {
                    lower: vec![0.0; n],
                    upper: vec![FRAC_PI_2; n],
                    periodic: vec![false; n],
                    guard: vec![DEFAULT_GUARD; n],
                };
                for i in (m - 1)..n {
                    d.upper[i] = TAU;
                    d.periodic[i] = true;
                    d.guard[i] = 0.0;
                }
                d
            }
        }
    }
}

/// Squared radii `r_i^2` of the Hopf coordinates.
fn hopf_radii(m: usize, eta: &[f64]) -> Vec<f64> {
    let mut r2 = Vec::with_capacity(m);
    let mut prod = 1.0;
    for i in 0..m {
        if i + 1 < m {
            r2.push(prod * eta[i].cos().powi(2));
            prod *= eta[i].sin().powi(2);
        } else {
            r2.push(prod);
        }
    }
    r2
}

/// `d/d eta_j ln r_i^2`.
fn hopf_log_derivative(m: usize, eta: &[f64], i: usize, j: usize) -> f64 {
    if j < i {
        2.0 * eta[j].cos() / eta[j].sin()
    } else if j == i && i + 1 < m {
        -2.0 * eta[i].sin() / eta[i].cos()
    } else {
        0.0
    }
}

/// Coefficient of `d eta_k^2` in the round metric.
fn eta_block(eta: &[f64], k: usize) -> f64 {
    eta[..k].iter().map(|e| e.sin().powi(2)).product()
}

impl Geometry for BuiltinGeometry {
    fn dim(&self) -> usize {
        match self {
            BuiltinGeometry::FlatConstantForm { covector } => covector.len(),
            BuiltinGeometry::FlatTorus { covector, .. } => covector.len(),
            BuiltinGeometry::HeisenbergContact { .. } => 3,
            BuiltinGeometry::RoundSphereHopf { m } => 2 * m - 1,
        }
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            BuiltinGeometry::RoundSphereHopf { m } => {
                let m = *m;
                let eta = &x.as_slice()[..m - 1];
                let r2 = hopf_radii(m, eta);
                let mut diag = Vec::with_capacity(2 * m - 1);
                for k in 0..m - 1 {
                    diag.push(eta_block(eta, k));
                }
                diag.extend(r2);
                DMatrix::from_diagonal(&DVector::from_vec(diag))
            }
            _ => DMatrix::identity(self.dim(), self.dim()),
        }
    }

    fn one_form(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            BuiltinGeometry::FlatConstantForm { covector } | BuiltinGeometry::FlatTorus { covector, .. } => {
                DVector::from_column_slice(covector)
            }
            BuiltinGeometry::HeisenbergContact { sign } => DVector::from_vec(vec![-sign * x[1], 0.0, *sign]),
            BuiltinGeometry::RoundSphereHopf { m } => {
                let m = *m;
                let r2 = hopf_radii(m, &x.as_slice()[..m - 1]);
                let mut w = DVector::zeros(2 * m - 1);
                for (i, r) in r2.into_iter().enumerate() {
                    w[m - 1 + i] = -r;
                }
                w
            }
        }
    }

    fn metric_jet(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        let mut jet = vec![DMatrix::zeros(n, n); n];
        if let BuiltinGeometry::RoundSphereHopf { m } = self {
            let m = *m;
            let eta = &x.as_slice()[..m - 1];
            let r2 = hopf_radii(m, eta);
            for (j, jet_j) in jet.iter_mut().enumerate().take(m - 1) {
                for k in 0..m - 1 {
                    if j < k {
                        jet_j[(k, k)] = eta_block(eta, k) * 2.0 * eta[j].cos() / eta[j].sin();
                    }
                }
                for (i, r) in r2.iter().enumerate() {
                    jet_j[(m - 1 + i, m - 1 + i)] = r * hopf_log_derivative(m, eta, i, j);
                }
            }
        }
        jet
    }

    fn one_form_jet(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut jet = DMatrix::zeros(n, n);
        match self {
            BuiltinGeometry::HeisenbergContact { sign } => {
                jet[(1, 0)] = -sign;
            }
            BuiltinGeometry::RoundSphereHopf { m } => {
                let m = *m;
                let eta = &x.as_slice()[..m - 1];
                let r2 = hopf_radii(m, eta);
                for j in 0..m - 1 {
                    for (i, r) in r2.iter().enumerate() {
                        jet[(j, m - 1 + i)] = -r * hopf_log_derivative(m, eta, i, j);
                    }
                }
            }
            _ => {}
        }
        jet
    }

    fn killing(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            BuiltinGeometry::FlatTorus { killing, .. } => Some(DVector::from_column_slice(killing)),
            BuiltinGeometry::RoundSphereHopf { m } => {
                let mut y = DVector::zeros(2 * m - 1);
                for i in 0..*m {
                    y[m - 1 + i] = 1.0;
                }
                Some(y)
            }
            _ => None,
        }
    }
}
