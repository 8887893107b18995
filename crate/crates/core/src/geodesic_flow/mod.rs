//! Geodesic flows of the Kropina metric and of the Randers approximations,
//! integrated together with the time coordinate of their lightlike lift.

mod dopri;
mod path;
mod quadrature;
mod spray;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::ManifoldModel;
use crate::metrics::{check_eps, RandersFamily, TOL_ADM};

pub use dopri::{Dopri5, Stats};
pub use path::{hausdorff, DiscretePath};
pub use quadrature::{admissibility_margin, is_admissible, path_energy, path_length, riemannian_energy, romberg};
pub(crate) use quadrature::{local_norm, norm_with_gradients, GAUSS3};
pub use spray::{
    constant_speed_spray, euler_lagrange_spray, kropina_spray, randers_spray, spacetime_spray, Parametrization,
    SprayValue,
};
pub(crate) use spray::{spacetime_spray_in, Frame};

/// Abort threshold on `-omega(x') / |x'|` while integrating Kropina geodesics.
pub const CONE_EXIT: f64 = 1e-6;
/// Default number of output samples (`2^10 + 1`, suitable for Romberg).
pub const DEFAULT_SAMPLES: usize = 1025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FlowKind {
    #[default]
    Kropina,
    Randers {
        eps: f64,
        #[serde(default)]
        family: RandersFamily,
    },
}

impl FlowKind {
    pub fn randers(eps: f64) -> Self {
        FlowKind::Randers { eps, family: RandersFamily::Standard }
    }

    pub fn katok(eps: f64) -> Self {
        FlowKind::Randers { eps, family: RandersFamily::Katok }
    }

    /// The `eps` of the spacetime metric (0 for Kropina).
    pub fn eps(&self) -> f64 {
        match self {
            FlowKind::Kropina => 0.0,
            FlowKind::Randers { eps, .. } => *eps,
        }
    }

    pub fn omega_scale(&self) -> f64 {
        match self {
            FlowKind::Kropina => 1.0,
            FlowKind::Randers { eps, family } => family.omega_scale(*eps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub tol: f64,
    pub samples: usize,
    pub parametrization: Parametrization,
}

impl IntegrateOptions {
    pub fn new(tol: f64) -> Self {
        IntegrateOptions { tol, samples: DEFAULT_SAMPLES, parametrization: Parametrization::Lightlike }
    }

    pub fn parametrization(mut self, p: Parametrization) -> Self {
        self.parametrization = p;
        self
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.samples = n.max(2);
        self
    }
}

/// Largest deviation of each trace from its initial value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub omega_drift: f64,
    pub speed_drift: f64,
    /// Drift of `omega(x') - eps t'` (Randers only).
    pub c_eps_drift: Option<f64>,
    /// Drift of `eps g0(x', x') + omega(x')^2` (Randers only).
    pub quadratic_drift: Option<f64>,
    pub lift_increasing: bool,
}

/// An integrated geodesic sampled on `[0, 1]`. Velocities and traces refer to the
/// normalized parameter, so they equal `horizon` times their integration values.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSolution {
    pub kind: FlowKind,
    pub parametrization: Parametrization,
    pub horizon: f64,
    pub path: DiscretePath,
    pub lift: Vec<f64>,
    pub lift_rate: Vec<f64>,
    pub omega_trace: Vec<f64>,
    pub speed_trace: Vec<f64>,
    pub c_eps_trace: Option<Vec<f64>>,
    pub residuals: Residuals,
    pub stats: Stats,
}

fn drift(trace: &[f64]) -> f64 {
    trace.iter().map(|v| (v - trace[0]).abs()).fold(0.0, f64::max)
}

/// Integrates a geodesic from `(x0, v0)` over `[0, horizon]` in the lightlike parametrization.
pub fn integrate(
    model: &ManifoldModel,
    kind: FlowKind,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    horizon: f64,
    tol: f64,
) -> Result<GeodesicSolution> {
    integrate_with(model, kind, x0, v0, horizon, &IntegrateOptions::new(tol))
}

pub fn integrate_with(
    model: &ManifoldModel,
    kind: FlowKind,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    horizon: f64,
    opts: &IntegrateOptions,
) -> Result<GeodesicSolution> {
    let op = "geodesic_flow::integrate";
    let n = model.dim();
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::OutOfRange { op, what: format!("horizon {horizon} must be positive") });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::OutOfRange { op, what: "tolerance must be positive".into() });
    }
    if v0.len() != n {
        return Err(Error::Invalid { op, what: "velocity dimension mismatch".into() });
    }
    model.check_guarded(op, x0)?;
    let eps = kind.eps();
    if let FlowKind::Randers { eps, .. } = kind {
        check_eps(op, eps)?;
    }
    let scale = kind.omega_scale();
    {
        let frame = Frame::at(model, x0)?;
        let p = frame.w.dot(v0);
        if eps == 0.0 && -p <= TOL_ADM {
            return Err(Error::InadmissibleVector { op, margin: -p });
        }
        if v0.norm() == 0.0 {
            return Err(Error::Invalid { op, what: "zero initial velocity".into() });
        }
    }

    let param = opts.parametrization;
    let rhs = |_s: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = y.rows(0, n).into_owned();
        let v = y.rows(n, n).into_owned();
        if !model.domain().contains(x.as_slice()) || model.domain().in_guard(x.as_slice()) {
            return Err(Error::ChartGuard { op, point: x.as_slice().to_vec() });
        }
        let frame = Frame::at(model, &x)?.scale_form(scale);
        let sv = spacetime_spray_in(&frame, eps, &v)?;
        let accel = match param {
            Parametrization::Lightlike => sv.accel,
            Parametrization::ConstantSpeed => sv.accel - &v * (sv.tddot / sv.tdot),
        };
        let mut dy = DVector::zeros(2 * n + 1);
        dy.rows_mut(0, n).copy_from(&v);
        dy.rows_mut(n, n).copy_from(&accel);
        dy[2 * n] = sv.tdot;
        Ok(dy)
    };
    let check = |s: f64, y: &DVector<f64>| -> Result<()> {
        let x = y.rows(0, n).into_owned();
        model.check_guarded(op, &x)?;
        if eps == 0.0 {
            let v = y.rows(n, n).into_owned();
            let geo = model.geometry();
            let norm = v.dot(&(geo.metric(&x) * &v)).sqrt();
            if -geo.one_form(&x).dot(&v) < CONE_EXIT * norm {
                return Err(Error::ConeExit { op, s });
            }
        }
        Ok(())
    };

    let m = opts.samples;
    let outputs: Vec<f64> = (0..m).map(|k| horizon * k as f64 / (m - 1) as f64).collect();
    let mut y0 = DVector::zeros(2 * n + 1);
    y0.rows_mut(0, n).copy_from(x0);
    y0.rows_mut(n, n).copy_from(v0);
    let (states, stats) = Dopri5::new(opts.tol).solve(rhs, 0.0, y0, horizon, &outputs, check)?;

    let params: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();
    let points: Vec<DVector<f64>> = states.iter().map(|y| y.rows(0, n).into_owned()).collect();
    let velocities: Vec<DVector<f64>> = states.iter().map(|y| y.rows(n, n) * horizon).collect();
    let lift: Vec<f64> = states.iter().map(|y| y[2 * n]).collect();
    let mut lift_rate = Vec::with_capacity(m);
    let mut omega_trace = Vec::with_capacity(m);
    let mut speed_trace = Vec::with_capacity(m);
    let mut quad = Vec::with_capacity(m);
    for (x, v) in points.iter().zip(&velocities) {
        let geo = model.geometry();
        let w = geo.one_form(x) * scale;
        let q = v.dot(&(geo.metric(x) * v));
        let p = w.dot(v);
        let speed = local_norm(model, &kind, x, v).ok_or(Error::ConeExit { op, s: 0.0 })?;
        omega_trace.push(p);
        speed_trace.push(speed);
        lift_rate.push(speed);
        quad.push(eps * q + p * p);
    }
    let c_eps_trace = (eps > 0.0).then(|| omega_trace.iter().zip(&lift_rate).map(|(p, r)| p - eps * r).collect::<Vec<_>>());
    let residuals = Residuals {
        omega_drift: drift(&omega_trace),
        speed_drift: drift(&speed_trace),
        c_eps_drift: c_eps_trace.as_deref().map(drift),
        quadratic_drift: (eps > 0.0).then(|| drift(&quad)),
        lift_increasing: lift.windows(2).all(|w| w[1] > w[0]),
    };
    let path = DiscretePath::open(params, points)?.with_velocities(velocities)?;
    Ok(GeodesicSolution {
        kind,
        parametrization: param,
        horizon,
        path,
        lift,
        lift_rate,
        omega_trace,
        speed_trace,
        c_eps_trace,
        residuals,
        stats,
    })
}

impl GeodesicSolution {
    pub fn arrival_time(&self) -> f64 {
        self.lift[self.lift.len() - 1] - self.lift[0]
    }

    pub fn endpoint(&self) -> DVector<f64> {
        self.path.end()
    }

    /// Initial velocity in integration units.
    pub fn initial_velocity(&self) -> DVector<f64> {
        self.path.velocities.as_ref().expect("solutions carry velocities")[0].clone() / self.horizon
    }

    /// Drift of the quantity conserved by the chosen parametrization.
    pub fn conserved_drift(&self) -> f64 {
        match (self.parametrization, self.kind) {
            (Parametrization::ConstantSpeed, _) => self.residuals.speed_drift,
            (Parametrization::Lightlike, FlowKind::Kropina) => self.residuals.omega_drift,
            (Parametrization::Lightlike, FlowKind::Randers { .. }) => self.residuals.c_eps_drift.unwrap_or(0.0),
        }
    }

    /// CSV with columns `s, x1..xn, v1..vn, t, omega_dot, speed`.
    pub fn to_csv(&self) -> String {
        let n = self.path.dim();
        let mut out = String::from("s");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=n {
            out.push_str(&format!(",v{i}"));
        }
        out.push_str(",t,omega_dot,speed\n");
        let vel = self.path.velocities.as_ref().expect("solutions carry velocities");
        for k in 0..self.path.len() {
            let mut row = vec![self.path.params[k]];
            row.extend(self.path.points[k].iter());
            row.extend(vel[k].iter());
            row.extend([self.lift[k], self.omega_trace[k], self.speed_trace[k]]);
            out.push_str(&crate::cli::csv_row(&row));
        }
        out
    }

    /// JSON summary: kind, horizon, endpoints, arrival time and residuals.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "parametrization": self.parametrization,
            "horizon": self.horizon,
            "start": self.path.start().as_slice(),
            "end": self.endpoint().as_slice(),
            "arrival_time": self.arrival_time(),
            "residuals": self.residuals,
            "steps": {"accepted": self.stats.accepted, "rejected": self.stats.rejected, "evaluations": self.stats.evaluations},
        })
    }
}

/// `1/2 int g_eps(z', z') ds` for the lift `z = (x, t)` stored in the solution,
/// with `g_eps = g0 + omega (x) dt + dt (x) omega - eps dt^2` (`omega` scaled as in `kind`).
pub fn spacetime_energy_diagnostic(model: &ManifoldModel, kind: &FlowKind, solution: &GeodesicSolution) -> f64 {
    let geo = model.geometry();
    let eps = kind.eps();
    let scale = kind.omega_scale();
    let vel = solution.path.velocities.as_ref().expect("solutions carry velocities");
    let vals: Vec<f64> = solution
        .path
        .points
        .iter()
        .zip(vel)
        .zip(&solution.lift_rate)
        .map(|((x, v), &td)| {
            let q = v.dot(&(geo.metric(x) * v));
            let p = scale * geo.one_form(x).dot(v);
            0.5 * (q + 2.0 * p * td - eps * td * td)
        })
        .collect();
    let n = vals.len() - 1;
    romberg(&vals, 1.0).unwrap_or_else(|| {
        let h = 1.0 / n as f64;
        h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n]))
    })
}
