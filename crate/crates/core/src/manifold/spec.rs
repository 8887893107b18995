//! JSON manifold-spec files.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{is_positive_definite, BuiltinGeometry, ChartDomain, Geometry, ManifoldModel};
use crate::error::{Error, Result};
use crate::expr::{self, Expr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periodic: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<BuiltinRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expressions: Option<ExpressionSpec>,
    /// Chart box for expression models; periodic axes take their period from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

/// A builtin either by short name or with explicit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BuiltinRef {
    Name(String),
    Spec(BuiltinSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinSpec {
    FlatConstantForm {
        covector: Vec<f64>,
    },
    RoundSphereHopf {
        m: usize,
    },
    HeisenbergContact {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sign: Option<f64>,
    },
    FlatTorus {
        covector: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        periods: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        killing: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionSpec {
    /// Row-major `dim x dim` formulas for `g0`.
    pub metric: Vec<Vec<String>>,
    pub one_form: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub killing: Option<Vec<String>>,
}

const OP: &str = "manifold::spec";

impl BuiltinRef {
    pub fn resolve(&self) -> Result<BuiltinGeometry> {
        match self {
            BuiltinRef::Name(name) => match name.as_str() {
                "flat_dx" => Ok(BuiltinGeometry::flat(&[-1.0, 0.0])),
                "flat_dz" => Ok(BuiltinGeometry::flat(&[0.0, 0.0, -1.0])),
                "heisenberg" => Ok(BuiltinGeometry::heisenberg()),
                "heisenberg_plus" => Ok(BuiltinGeometry::HeisenbergContact { sign: 1.0 }),
                "hopf_s3" => Ok(BuiltinGeometry::hopf_sphere(2)),
                "hopf_s5" => Ok(BuiltinGeometry::hopf_sphere(3)),
                "torus_dx" => Ok(BuiltinGeometry::torus(&[-1.0, 0.0])),
                other => Err(Error::Invalid { op: OP, what: format!("unknown builtin '{other}'") }),
            },
            BuiltinRef::Spec(spec) => Ok(match spec {
                BuiltinSpec::FlatConstantForm { covector } => BuiltinGeometry::flat(covector),
                BuiltinSpec::RoundSphereHopf { m } => {
                    if *m < 2 {
                        return Err(Error::Invalid { op: OP, what: "round_sphere_hopf needs m >= 2".into() });
                    }
                    BuiltinGeometry::hopf_sphere(*m)
                }
                BuiltinSpec::HeisenbergContact { sign } => {
                    let sign = sign.unwrap_or(-1.0);
                    if sign.abs() != 1.0 {
                        return Err(Error::Invalid { op: OP, what: "heisenberg sign must be +1 or -1".into() });
                    }
                    BuiltinGeometry::HeisenbergContact { sign }
                }
                BuiltinSpec::FlatTorus { covector, periods, killing } => {
                    let mut t = BuiltinGeometry::torus(covector);
                    if let BuiltinGeometry::FlatTorus { periods: p, killing: k, .. } = &mut t {
                        if let Some(periods) = periods {
                            *p = periods.clone();
                        }
                        if let Some(killing) = killing {
                            *k = killing.clone();
                        }
                        if p.len() != covector.len() || k.len() != covector.len() {
                            return Err(Error::Invalid { op: OP, what: "flat_torus vectors must have equal length".into() });
                        }
                    }
                    t
                }
            }),
        }
    }
}

impl ManifoldSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid { op: OP, what: format!("manifold spec: {e}") })
    }

    pub fn to_model(&self) -> Result<ManifoldModel> {
        let model = match (&self.builtin, &self.expressions) {
            (Some(b), None) => {
                let geometry = b.resolve()?;
                let domain = geometry.domain();
                let model = ManifoldModel::new(self.name.clone(), Arc::new(geometry), domain)?;
                if model.dim() != self.dim {
                    return Err(Error::Invalid {
                        op: OP,
                        what: format!("builtin has dimension {}, spec says {}", model.dim(), self.dim),
                    });
                }
                if !self.periodic.is_empty() && self.periodic != model.domain().periodic {
                    return Err(Error::Invalid { op: OP, what: "periodic flags disagree with the builtin chart".into() });
                }
                model
            }
            (None, Some(e)) => {
                let geometry = ExpressionGeometry::parse(self.dim, e)?;
                let domain = self.expression_domain()?;
                let model = ManifoldModel::new(self.name.clone(), Arc::new(geometry), domain)?;
                check_positive_definite(&model)?;
                model
            }
            _ => {
                return Err(Error::Invalid { op: OP, what: "exactly one of 'builtin' or 'expressions' is required".into() })
            }
        };
        Ok(model)
    }

    fn expression_domain(&self) -> Result<ChartDomain> {
        let n = self.dim;
        let mut d = ChartDomain::unbounded(n);
        if let Some(lo) = &self.lower {
            if lo.len() != n {
                return Err(Error::Invalid { op: OP, what: "'lower' must have dim entries".into() });
            }
            d.lower = lo.clone();
        }
        if let Some(hi) = &self.upper {
            if hi.len() != n {
                return Err(Error::Invalid { op: OP, what: "'upper' must have dim entries".into() });
            }
            d.upper = hi.clone();
        }
        if !self.periodic.is_empty() {
            if self.periodic.len() != n {
                return Err(Error::Invalid { op: OP, what: "'periodic' must have dim entries".into() });
            }
            d.periodic = self.periodic.clone();
        }
        for i in 0..n {
            if d.lower[i] >= d.upper[i] {
                return Err(Error::Invalid { op: OP, what: format!("empty chart interval on axis {}", i + 1) });
            }
            if d.periodic[i] && !(d.lower[i].is_finite() && d.upper[i].is_finite()) {
                return Err(Error::Invalid { op: OP, what: format!("periodic axis {} needs finite bounds", i + 1) });
            }
        }
        Ok(d)
    }
}

fn check_positive_definite(model: &ManifoldModel) -> Result<()> {
    let (lo, hi) = model.domain().sampling_box(1.0);
    let n = model.dim();
    let mut probes = vec![DVector::from_iterator(n, lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)))];
    for corner in 0..(1usize << n.min(6)) {
        probes.push(DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let t = if i < 6 && corner & (1 << i) != 0 { 0.9 } else { 0.1 };
                lo[i] + t * (hi[i] - lo[i])
            }),
        ));
    }
    for x in probes {
        let g = model.metric_at(&x)?;
        if !is_positive_definite(&g) {
            return Err(Error::NotPositiveDefinite { op: OP, point: x.as_slice().to_vec() });
        }
    }
    Ok(())
}

/// Geometry given by coordinate formulas; jets come from finite differences.
#[derive(Debug, Clone)]
pub struct ExpressionGeometry {
    dim: usize,
    metric: Vec<Expr>,
    one_form: Vec<Expr>,
    killing: Option<Vec<Expr>>,
}

fn parse_field(src: &str, dim: usize, field: String) -> Result<Expr> {
    expr::parse(src, dim).map_err(|e| Error::Expression {
        op: OP,
        field,
        line: e.line,
        column: e.column,
        message: e.message,
    })
}

impl ExpressionGeometry {
    pub fn parse(dim: usize, spec: &ExpressionSpec) -> Result<Self> {
        if spec.metric.len() != dim || spec.metric.iter().any(|row| row.len() != dim) {
            return Err(Error::Invalid { op: OP, what: format!("metric must be {dim}x{dim}") });
        }
        if spec.one_form.len() != dim {
            return Err(Error::Invalid { op: OP, what: format!("one_form must have {dim} entries") });
        }
        let mut metric = Vec::with_capacity(dim * dim);
        for (i, row) in spec.metric.iter().enumerate() {
            for (j, src) in row.iter().enumerate() {
                metric.push(parse_field(src, dim, format!("metric[{i}][{j}]"))?);
            }
        }
        let one_form = spec
            .one_form
            .iter()
            .enumerate()
            .map(|(i, src)| parse_field(src, dim, format!("one_form[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let killing = match &spec.killing {
            None => None,
            Some(k) => {
                if k.len() != dim {
                    return Err(Error::Invalid { op: OP, what: format!("killing must have {dim} entries") });
                }
                Some(
                    k.iter()
                        .enumerate()
                        .map(|(i, src)| parse_field(src, dim, format!("killing[{i}]")))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        };
        Ok(ExpressionGeometry { dim, metric, one_form, killing })
    }
}

impl Geometry for ExpressionGeometry {
    fn dim(&self) -> usize {
        self.dim
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        // symmetrized so that round-off in user formulas cannot break symmetry
        let raw = DMatrix::from_fn(n, n, |i, j| self.metric[i * n + j].eval(x.as_slice()));
        (&raw + raw.transpose()) * 0.5
    }

    fn one_form(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim, self.one_form.iter().map(|e| e.eval(x.as_slice())))
    }

    fn killing(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.killing
            .as_ref()
            .map(|k| DVector::from_iterator(self.dim, k.iter().map(|e| e.eval(x.as_slice()))))
    }
}
