use nalgebra::DVector;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::manifold::ManifoldModel;

/// Ordered samples of a curve in one chart.
///
/// Open paths carry `params` from 0 to 1 inclusive. Closed paths carry `N` samples
/// at `k / N`; the closing point at parameter 1 is `points[0] + shift`, where `shift`
/// is a combination of chart periods (zero for loops that close in the chart).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub params: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    pub velocities: Option<Vec<DVector<f64>>>,
    pub closed: bool,
    pub shift: DVector<f64>,
}

impl DiscretePath {
    pub fn open(params: Vec<f64>, points: Vec<DVector<f64>>) -> Result<Self> {
        let op = "geodesic_flow::discrete_path";
        if points.len() < 2 || params.len() != points.len() {
            return Err(Error::Invalid { op, what: "need at least two samples with matching params".into() });
        }
        if params.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid { op, what: "params must increase strictly".into() });
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Invalid { op, what: "mixed point dimensions".into() });
        }
        Ok(DiscretePath { params, points, velocities: None, closed: false, shift: DVector::zeros(dim) })
    }

    /// Open path with uniform parameters.
    pub fn polyline(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.len();
        let params = (0..n).map(|k| k as f64 / (n.max(2) - 1) as f64).collect();
        Self::open(params, points)
    }

    /// Straight chart segment with `segments + 1` uniform samples.
    pub fn straight(a: &DVector<f64>, b: &DVector<f64>, segments: usize) -> Self {
        let points = (0..=segments).map(|k| a + (b - a) * (k as f64 / segments as f64)).collect();
        Self::polyline(points).expect("segment has at least two samples")
    }

    pub fn closed_loop(points: Vec<DVector<f64>>, shift: DVector<f64>) -> Result<Self> {
        let n = points.len();
        if n < 3 {
            return Err(Error::Invalid { op: "geodesic_flow::discrete_path", what: "closed loop needs at least three samples".into() });
        }
        if points.iter().any(|p| p.len() != shift.len()) {
            return Err(Error::Invalid { op: "geodesic_flow::discrete_path", what: "mixed point dimensions".into() });
        }
        let params = (0..n).map(|k| k as f64 / n as f64).collect();
        Ok(DiscretePath { params, points, velocities: None, closed: true, shift })
    }

    pub fn with_velocities(mut self, velocities: Vec<DVector<f64>>) -> Result<Self> {
        if velocities.len() != self.points.len() {
            return Err(Error::Invalid { op: "geodesic_flow::discrete_path", what: "one velocity per sample required".into() });
        }
        self.velocities = Some(velocities);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.points[0]
    }

    /// Final point (for closed loops, the unwrapped closing point).
    pub fn end(&self) -> DVector<f64> {
        if self.closed {
            &self.points[0] + &self.shift
        } else {
            self.points[self.len() - 1].clone()
        }
    }

    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.len()
        } else {
            self.len() - 1
        }
    }

    /// Start point, chord vector and parameter increment of segment `k`.
    pub fn segment(&self, k: usize) -> (DVector<f64>, DVector<f64>, f64) {
        let a = &self.points[k];
        if self.closed && k + 1 == self.len() {
            let b = &self.points[0] + &self.shift;
            (a.clone(), b - a, 1.0 - self.params[k])
        } else {
            (a.clone(), &self.points[k + 1] - a, self.params[k + 1] - self.params[k])
        }
    }

    pub fn has_uniform_params(&self) -> bool {
        let n = self.segment_count();
        let h = 1.0 / n as f64;
        self.params.iter().enumerate().all(|(k, s)| (s - k as f64 * h).abs() < 1e-12)
    }

    /// Velocities of a closed loop from its samples by spectral differentiation.
    pub fn spectral_velocities(&self) -> Vec<DVector<f64>> {
        assert!(self.closed, "spectral velocities need a closed loop");
        let n = self.len();
        let dim = self.dim();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut vel = vec![self.shift.clone(); n];
        for i in 0..dim {
            let mut buf: Vec<Complex<f64>> = (0..n)
                .map(|k| Complex::new(self.points[k][i] - self.shift[i] * k as f64 / n as f64, 0.0))
                .collect();
            fwd.process(&mut buf);
            for (k, c) in buf.iter_mut().enumerate() {
                let freq = if k < n / 2 || (k == n / 2 && n % 2 == 1) {
                    k as f64
                } else if n % 2 == 0 && k == n / 2 {
                    0.0
                } else {
                    k as f64 - n as f64
                };
                *c *= Complex::new(0.0, std::f64::consts::TAU * freq / n as f64);
            }
            inv.process(&mut buf);
            for (k, c) in buf.iter().enumerate() {
                vel[k][i] += c.re;
            }
        }
        vel
    }

    /// Periodic samples of a field along a closed loop, differentiated spectrally.
    pub fn spectral_derivative(samples: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = samples.len();
        let zero = DVector::zeros(samples[0].len());
        let tmp = DiscretePath { params: vec![0.0; n], points: samples.to_vec(), velocities: None, closed: true, shift: zero };
        tmp.spectral_velocities()
    }

    /// Uniform resampling by chart arc length (open paths keep their endpoints).
    pub fn resample(&self, count: usize) -> Self {
        let segs = self.segment_count();
        let mut cum = vec![0.0];
        for k in 0..segs {
            let (_, d, _) = self.segment(k);
            cum.push(cum[k] + d.norm());
        }
        let total = cum[segs];
        let samples = if self.closed { count } else { count.max(2) - 1 };
        let mut points = Vec::with_capacity(count);
        let mut seg = 0;
        for j in 0..=samples {
            if self.closed && j == samples {
                break;
            }
            let target = total * j as f64 / samples as f64;
            while seg + 1 < segs && cum[seg + 1] < target {
                seg += 1;
            }
            let (a, d, _) = self.segment(seg);
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { ((target - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
            points.push(a + d * t);
        }
        if self.closed {
            Self::closed_loop(points, self.shift.clone()).expect("resampled loop is valid")
        } else {
            let last = points.len() - 1;
            points[0] = self.points[0].clone();
            points[last] = self.end();
            Self::polyline(points).expect("resampled path is valid")
        }
    }

    /// Largest pairwise g0-distance proxy: chart distance between samples scaled by
    /// the largest metric eigenvalue at the first sample.
    pub fn diameter(&self, model: &ManifoldModel) -> f64 {
        let g = model.geometry().metric(&self.points[0]);
        let scale = g.symmetric_eigenvalues().max().sqrt();
        let mut d: f64 = 0.0;
        for a in &self.points {
            for b in &self.points {
                d = d.max(model.domain().distance(a.as_slice(), b.as_slice()));
            }
        }
        d * scale
    }

    /// Sample nodes of a dense reconstruction for plotting: closed loops repeat
    /// the first row as the last one.
    pub fn rows(&self) -> Vec<(f64, DVector<f64>, Option<DVector<f64>>)> {
        let mut rows: Vec<_> = (0..self.len())
            .map(|k| (self.params[k], self.points[k].clone(), self.velocities.as_ref().map(|v| v[k].clone())))
            .collect();
        if self.closed {
            rows.push((1.0, self.end(), self.velocities.as_ref().map(|v| v[0].clone())));
        }
        rows
    }
}

/// Symmetric Hausdorff distance between two sampled curves in chart coordinates,
/// measuring point-to-polyline distances.
pub fn hausdorff(model: &ManifoldModel, a: &DiscretePath, b: &DiscretePath) -> f64 {
    fn one_sided(model: &ManifoldModel, a: &DiscretePath, b: &DiscretePath) -> f64 {
        a.points
            .iter()
            .map(|p| {
                (0..b.segment_count())
                    .map(|k| {
                        let (q, d, _) = b.segment(k);
                        let r = model.domain().delta(q.as_slice(), p.as_slice());
                        let dd = d.norm_squared();
                        let t = if dd > 0.0 { (r.dot(&d) / dd).clamp(0.0, 1.0) } else { 0.0 };
                        (r - d * t).norm()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
    one_sided(model, a, b).max(one_sided(model, b, a))
}
