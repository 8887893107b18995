//! Dormand–Prince 5(4) with Hairer's fourth-order dense output.

use nalgebra::DVector;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    /// Steps below `min_step * |span|` are reported as underflow.
    pub min_step: f64,
}

impl Dopri5 {
    pub fn new(tol: f64) -> Self {
        Dopri5 { atol: tol, rtol: tol, max_steps: 2_000_000, min_step: 1e-14 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl Stats {
    pub fn merge(&mut self, other: Stats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.evaluations += other.evaluations;
    }
}

fn err_norm(solver: &Dopri5, y0: &DVector<f64>, y1: &DVector<f64>, e: &DVector<f64>) -> f64 {
    let n = y0.len() as f64;
    let sum: f64 = (0..y0.len())
        .map(|i| {
            let sk = solver.atol + solver.rtol * y0[i].abs().max(y1[i].abs());
            (e[i] / sk).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

impl Dopri5 {
    /// Integrates `y' = f(s, y)` from `s0` to `s1` and returns the states at `outputs`
    /// (sorted, inside `[s0, s1]`). Errors from `f` reject the step; if the step size
    /// then underflows the last such error is returned. `check` runs on every
    /// accepted state and aborts the integration on error.
    pub fn solve<F, C>(
        &self,
        f: F,
        s0: f64,
        y0: DVector<f64>,
        s1: f64,
        outputs: &[f64],
        mut check: C,
    ) -> Result<(Vec<DVector<f64>>, Stats)>
    where
        F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
        C: FnMut(f64, &DVector<f64>) -> Result<()>,
    {
        let span = s1 - s0;
        let dir = span.signum();
        let mut stats = Stats::default();
        let mut out = Vec::with_capacity(outputs.len());
        let mut next = 0;
        while next < outputs.len() && (outputs[next] - s0) * dir <= 0.0 {
            out.push(y0.clone());
            next += 1;
        }
        if span == 0.0 {
            while out.len() < outputs.len() {
                out.push(y0.clone());
            }
            return Ok((out, stats));
        }

        let mut s = s0;
        let mut y = y0;
        let mut k1 = f(s, &y)?;
        stats.evaluations += 1;
        let mut h = self.initial_step(&f, s, &y, &k1, span.abs(), &mut stats) * dir;
        let h_min = self.min_step * span.abs();
        let mut last_reject = false;
        let mut pending: Option<Error> = None;

        loop {
            if stats.accepted + stats.rejected > self.max_steps {
                return Err(Error::StepUnderflow { op: "geodesic_flow::integrate", s });
            }
            if (s + h - s1) * dir > 0.0 {
                h = s1 - s;
            }
            let attempt = self.step(&f, s, &y, &k1, h, &mut stats);
            let (y1, k7, e, cont) = match attempt {
                Ok(v) => v,
                Err(err) => {
                    stats.rejected += 1;
                    pending = Some(err);
                    h *= 0.25;
                    last_reject = true;
                    if h.abs() < h_min {
                        return Err(pending.unwrap());
                    }
                    continue;
                }
            };
            let err = err_norm(self, &y, &y1, &e);
            if !err.is_finite() || err > 1.0 {
                stats.rejected += 1;
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
                h *= fac;
                last_reject = true;
                if h.abs() < h_min {
                    return Err(pending.unwrap_or(Error::StepUnderflow { op: "geodesic_flow::integrate", s }));
                }
                continue;
            }
            stats.accepted += 1;
            let s_new = if (s + h - s1) * dir >= 0.0 { s1 } else { s + h };
            while next < outputs.len() && (outputs[next] - s_new) * dir <= 0.0 {
                let theta = (outputs[next] - s) / h;
                out.push(dense(&cont, theta));
                next += 1;
            }
            s = s_new;
            y = y1;
            k1 = k7;
            check(s, &y)?;
            pending = None;
            if s == s1 {
                break;
            }
            let mut fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
            if last_reject {
                fac = fac.min(1.0);
            }
            last_reject = false;
            h *= fac;
        }
        while out.len() < outputs.len() {
            out.push(y.clone());
        }
        Ok((out, stats))
    }

    fn initial_step<F>(&self, f: &F, s: f64, y: &DVector<f64>, f0: &DVector<f64>, span: f64, stats: &mut Stats) -> f64
    where
        F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
    {
        let sc = y.map(|v| self.atol + self.rtol * v.abs());
        let n = y.len() as f64;
        let d0 = (y.component_div(&sc).norm_squared() / n).sqrt();
        let d1 = (f0.component_div(&sc).norm_squared() / n).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span);
        let y1 = y + f0 * h0;
        let h1 = match f(s + h0, &y1) {
            Ok(f1) => {
                stats.evaluations += 1;
                let d2 = ((&f1 - f0).component_div(&sc).norm_squared() / n).sqrt() / h0;
                let m = d1.max(d2);
                if m <= 1e-15 {
                    (h0 * 1e-3).max(1e-6)
                } else {
                    (0.01 / m).powf(0.2)
                }
            }
            Err(_) => h0 * 0.1,
        };
        (100.0 * h0).min(h1).min(span)
    }

    #[allow(clippy::type_complexity)]
    fn step<F>(
        &self,
        f: &F,
        s: f64,
        y: &DVector<f64>,
        k1: &DVector<f64>,
        h: f64,
        stats: &mut Stats,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, [DVector<f64>; 5])>
    where
        F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
    {
        let k2 = f(s + C2 * h, &(y + k1 * (h * A21)))?;
        let k3 = f(s + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h))?;
        let k4 = f(s + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
        let k5 = f(s + C5 * h, &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h))?;
        let k6 = f(s + h, &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h))?;
        let y1 = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = f(s + h, &y1)?;
        stats.evaluations += 6;
        let e = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let ydiff = &y1 - y;
        let bspl = k1 * h - &ydiff;
        let r4 = &ydiff - &k7 * h - &bspl;
        let r5 = (k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
        Ok((y1, k7, e, [y.clone(), ydiff, bspl, r4, r5]))
    }
}

fn dense(c: &[DVector<f64>; 5], theta: f64) -> DVector<f64> {
    let t1 = 1.0 - theta;
    &c[0] + (&c[1] + (&c[2] + (&c[3] + &c[4] * t1) * theta) * t1) * theta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(_s: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![y[1], -y[0]]))
    }

    #[test]
    fn harmonic_oscillator_with_dense_output() {
        let outputs: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let (ys, stats) = Dopri5::new(1e-10)
            .solve(harmonic, 0.0, DVector::from_vec(vec![0.0, 1.0]), 10.0, &outputs, |_, _| Ok(()))
            .unwrap();
        for (s, y) in outputs.iter().zip(&ys) {
            assert!((y[0] - s.sin()).abs() < 1e-8, "s = {s}: {} vs {}", y[0], s.sin());
            assert!((y[1] - s.cos()).abs() < 1e-8);
        }
        assert!(stats.accepted > 10);
    }

    #[test]
    fn endpoint_error_converges_at_fifth_order() {
        let run = |tol: f64| {
            let (ys, _) = Dopri5::new(tol)
                .solve(harmonic, 0.0, DVector::from_vec(vec![0.0, 1.0]), 3.0, &[3.0], |_, _| Ok(()))
                .unwrap();
            (ys[0][0] - 3f64.sin()).abs()
        };
        let (a, b) = (run(1e-6), run(1e-9));
        assert!(b < a / 100.0, "{a} {b}");
    }

    #[test]
    fn backward_integration() {
        let (ys, _) = Dopri5::new(1e-10)
            .solve(harmonic, 1.0, DVector::from_vec(vec![1f64.sin(), 1f64.cos()]), 0.0, &[0.5, 0.0], |_, _| Ok(()))
            .unwrap();
        assert!((ys[0][0] - 0.5f64.sin()).abs() < 1e-8);
        assert!(ys[1][0].abs() < 1e-8);
    }

    #[test]
    fn check_aborts() {
        let res = Dopri5::new(1e-8).solve(harmonic, 0.0, DVector::from_vec(vec![0.0, 1.0]), 3.0, &[3.0], |s, y| {
            if y[0] < 0.5 {
                Ok(())
            } else {
                Err(Error::ConeExit { op: "t", s })
            }
        });
        match res {
            Err(Error::ConeExit { s, .. }) => assert!(s > 0.4 && s < 0.8),
            other => panic!("{other:?}"),
        }
    }
}
