//! Limited-memory BFGS for objectives defined on an open feasible set.
//!
//! The objective returns `None` outside its domain; the backtracking line search
//! treats that like an Armijo failure, so iterates never leave the domain.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `|grad|_inf <= grad_tol`.
    pub grad_tol: f64,
    /// Stop when the relative decrease of `f` over one step is below this.
    pub f_rel_tol: f64,
    /// Stop as soon as `f <= f_target`.
    pub f_target: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { memory: 12, max_iter: 5000, grad_tol: 1e-10, f_rel_tol: 1e-15, f_target: f64::NEG_INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Target,
    Stalled,
    LineSearch,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Minimizes `f` from `x0`; `None` when `x0` is outside the domain.
pub fn lbfgs<F>(mut f: F, x0: DVector<f64>, opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let (mut fx, mut g) = f(&x0)?;
    let mut x = x0;
    let mut hist: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut stalls = 0;
    for iter in 0..opts.max_iter {
        let gnorm = g.amax();
        if fx <= opts.f_target {
            return Some(LbfgsResult { x, f: fx, grad_norm: gnorm, iterations: iter, termination: Termination::Target });
        }
        if gnorm <= opts.grad_tol {
            return Some(LbfgsResult { x, f: fx, grad_norm: gnorm, iterations: iter, termination: Termination::Gradient });
        }
        // two-loop recursion
        let mut q = -&g;
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * s.dot(&q);
            q -= y * a;
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q *= 1.0 / g.norm().max(1e-300);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q += s * (a - b);
        }
        let mut dir = q;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            hist.clear();
            dir = -&g / g.norm();
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            return Some(LbfgsResult { x, f: fx, grad_norm: gnorm, iterations: iter, termination: Termination::LineSearch });
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > opts.memory {
                hist.pop_front();
            }
        }
        let decrease = fx - fnew;
        x = xn;
        g = gn;
        let prev = fx;
        fx = fnew;
        if decrease <= opts.f_rel_tol * prev.abs().max(1e-300) {
            stalls += 1;
            if stalls >= 5 {
                let grad_norm = g.amax();
                return Some(LbfgsResult { x, f: fx, grad_norm, iterations: iter + 1, termination: Termination::Stalled });
            }
        } else {
            stalls = 0;
        }
    }
    let grad_norm = g.amax();
    Some(LbfgsResult { x, f: fx, grad_norm, iterations: opts.max_iter, termination: Termination::MaxIterations })
}

/// Modified-Newton refinement on the gradient, for minimizers whose last digits
/// are lost to rounding in `f`. The Hessian comes from central differences of
/// the gradient; eigenvalues are replaced by their magnitudes (floored). A step
/// is kept when it lowers `|grad|` without raising `f` beyond rounding.
pub fn newton_polish<F>(mut f: F, x0: DVector<f64>, grad_tol: f64, max_iter: usize) -> Option<LbfgsResult>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let (mut fx, mut g) = f(&x0)?;
    let mut x = x0;
    let n = x.len();
    let mut iter = 0;
    while iter < max_iter && g.amax() > grad_tol {
        iter += 1;
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let (_, gp) = f(&xp)?;
            let (_, gm) = f(&xm)?;
            hess.set_column(i, &((gp - gm) / (2.0 * h)));
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let eig = hess.symmetric_eigen();
        let lmax = eig.eigenvalues.amax();
        let floor = 1e-10 * lmax.max(1e-300);
        let coef = eig.eigenvectors.transpose() * &g;
        let scaled = DVector::from_iterator(n, coef.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l.abs().max(floor)));
        let dir = -(&eig.eigenvectors * scaled);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &x + &dir * step;
            if let Some((ft, gt)) = f(&trial) {
                if gt.amax() < g.amax() && ft <= fx + 1e-12 * fx.abs().max(1e-300) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else { break };
        x = xn;
        fx = fnew;
        g = gn;
    }
    let grad_norm = g.amax();
    let termination = if grad_norm <= grad_tol { Termination::Gradient } else { Termination::Stalled };
    Some(LbfgsResult { x, f: fx, grad_norm, iterations: iter, termination })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            Some((v, g))
        };
        let r = lbfgs(f, DVector::from_vec(vec![-1.2, 1.0]), &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8, "{:?}", r);
    }

    #[test]
    fn stays_in_domain() {
        // minimize x - ln x on x > 0 starting far right; the unconstrained step would jump below 0
        let f = |x: &DVector<f64>| (x[0] > 0.0).then(|| (x[0] - x[0].ln(), DVector::from_vec(vec![1.0 - 1.0 / x[0]])));
        let r = lbfgs(f, DVector::from_vec(vec![50.0]), &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!(lbfgs(f, DVector::from_vec(vec![-1.0]), &LbfgsOptions::default()).is_none());
    }

    #[test]
    fn newton_polish_converges_quadratically() {
        // ill-conditioned quadratic plus a quartic term
        let f = |x: &DVector<f64>| {
            let v = 0.5 * (x[0] * x[0] + 1e6 * x[1] * x[1]) + 0.25 * x[0].powi(4);
            Some((v, DVector::from_vec(vec![x[0] + x[0].powi(3), 1e6 * x[1]])))
        };
        let r = newton_polish(f, DVector::from_vec(vec![0.3, 1e-3]), 1e-12, 20).unwrap();
        assert_eq!(r.termination, Termination::Gradient);
        assert!(r.iterations < 10 && r.x.amax() < 1e-12);
    }
}
