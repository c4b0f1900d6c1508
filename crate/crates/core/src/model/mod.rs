//! Parametric field approximators `(u, v) = f_theta(x, t)`.
//!
//! A [`FieldModel`] evaluates a batch of space-time [`Query`] points and
//! returns the two field values together with their exact time derivatives
//! (forward mode in `t`). Gradients with respect to the flat parameter vector
//! come from [`FieldModel::pullback`], a reverse sweep that takes cotangents for
//! all four outputs. [`grad_params`] composes the two with the scalar [`Tape`]
//! so that any objective built from model outputs can be differentiated.

mod linear;
mod mlp;
pub mod tape;

pub use linear::LinearFieldModel;
pub use mlp::MlpFieldModel;
pub use tape::{Tape, Var};

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::Point3;

/// Flat trainable parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("theta", "parameter vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector",
                location: format!("index {i}"),
            });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParamVector::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

/// A space-time evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub coords: Point3,
    pub t: f64,
}

/// Per-query model outputs (or cotangents of them).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FieldOutputs {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub du_dt: Vec<f64>,
    pub dv_dt: Vec<f64>,
}

impl FieldOutputs {
    pub fn zeros(n: usize) -> Self {
        FieldOutputs {
            u: vec![0.0; n],
            v: vec![0.0; n],
            du_dt: vec![0.0; n],
            dv_dt: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        check_len("output u", n, self.u.len())?;
        check_len("output v", n, self.v.len())?;
        check_len("output du_dt", n, self.du_dt.len())?;
        check_len("output dv_dt", n, self.dv_dt.len())
    }
}

/// Affine map of `(x, y, z, t)` onto `[-1, 1]` per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl InputScaling {
    /// Bounds of the given coordinates and times.
    pub fn from_data(coords: &[Point3], times: &[f64]) -> Self {
        let mut lower = [f64::INFINITY; 4];
        let mut upper = [f64::NEG_INFINITY; 4];
        for p in coords {
            for k in 0..3 {
                lower[k] = lower[k].min(p[k]);
                upper[k] = upper[k].max(p[k]);
            }
        }
        for &t in times {
            lower[3] = lower[3].min(t);
            upper[3] = upper[3].max(t);
        }
        InputScaling { lower, upper }
    }

    pub fn identity() -> Self {
        InputScaling {
            lower: [-1.0; 4],
            upper: [1.0; 4],
        }
    }

    /// Slope of the map in dimension `k`; degenerate ranges map to the centre.
    pub fn slope(&self, k: usize) -> f64 {
        let span = self.upper[k] - self.lower[k];
        if span > 0.0 {
            2.0 / span
        } else {
            0.0
        }
    }

    pub fn apply(&self, q: &Query) -> [f64; 4] {
        let raw = [q.coords[0], q.coords[1], q.coords[2], q.t];
        let mut out = [0.0; 4];
        for k in 0..4 {
            let s = self.slope(k);
            out[k] = if s > 0.0 {
                s * (raw[k] - self.lower[k]) - 1.0
            } else {
                0.0
            };
        }
        out
    }
}

pub trait FieldModel: Send + Sync {
    fn n_params(&self) -> usize;

    /// Field values and their exact time derivatives at every query.
    fn eval(&self, theta: &[f64], queries: &[Query]) -> Result<FieldOutputs>;

    /// Vector-Jacobian product: `sum_q cot_q . d outputs_q / d theta`.
    fn pullback(&self, theta: &[f64], queries: &[Query], cot: &FieldOutputs) -> Result<Vec<f64>>;

    /// Evaluates, lets `objective` turn the outputs into a value and output
    /// cotangents, then pulls those back. Implementations may reuse the forward pass.
    fn value_and_pullback<T>(
        &self,
        theta: &[f64],
        queries: &[Query],
        objective: impl FnOnce(&FieldOutputs) -> Result<(T, FieldOutputs)>,
    ) -> Result<(T, Vec<f64>)>
    where
        Self: Sized,
    {
        let out = self.eval(theta, queries)?;
        let (value, cot) = objective(&out)?;
        let grad = self.pullback(theta, queries, &cot)?;
        Ok((value, grad))
    }

    fn forward(&self, theta: &[f64], coords: Point3, t: f64) -> Result<(f64, f64)> {
        let out = self.eval(theta, &[Query { coords, t }])?;
        Ok((out.u[0], out.v[0]))
    }

    fn dt_forward(&self, theta: &[f64], coords: Point3, t: f64) -> Result<(f64, f64)> {
        let out = self.eval(theta, &[Query { coords, t }])?;
        Ok((out.du_dt[0], out.dv_dt[0]))
    }

    /// Linear models expose their design for exact second-order products.
    fn as_linear(&self) -> Option<&LinearFieldModel> {
        None
    }
}

/// Serializable choice of model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyFieldModel {
    Mlp(MlpFieldModel),
    Linear(LinearFieldModel),
}

impl FieldModel for AnyFieldModel {
    fn n_params(&self) -> usize {
        match self {
            AnyFieldModel::Mlp(m) => m.n_params(),
            AnyFieldModel::Linear(m) => m.n_params(),
        }
    }

    fn eval(&self, theta: &[f64], queries: &[Query]) -> Result<FieldOutputs> {
        match self {
            AnyFieldModel::Mlp(m) => m.eval(theta, queries),
            AnyFieldModel::Linear(m) => m.eval(theta, queries),
        }
    }

    fn pullback(&self, theta: &[f64], queries: &[Query], cot: &FieldOutputs) -> Result<Vec<f64>> {
        match self {
            AnyFieldModel::Mlp(m) => m.pullback(theta, queries, cot),
            AnyFieldModel::Linear(m) => m.pullback(theta, queries, cot),
        }
    }

    fn value_and_pullback<T>(
        &self,
        theta: &[f64],
        queries: &[Query],
        objective: impl FnOnce(&FieldOutputs) -> Result<(T, FieldOutputs)>,
    ) -> Result<(T, Vec<f64>)> {
        match self {
            AnyFieldModel::Mlp(m) => m.value_and_pullback(theta, queries, objective),
            AnyFieldModel::Linear(m) => m.value_and_pullback(theta, queries, objective),
        }
    }

    fn as_linear(&self) -> Option<&LinearFieldModel> {
        match self {
            AnyFieldModel::Linear(m) => Some(m),
            AnyFieldModel::Mlp(_) => None,
        }
    }
}

/// Tape variables for one query's outputs.
#[derive(Clone, Copy)]
pub struct OutputVars<'t> {
    pub u: Var<'t>,
    pub v: Var<'t>,
    pub du_dt: Var<'t>,
    pub dv_dt: Var<'t>,
}

/// Gradient of a scalar objective of the model outputs with respect to `theta`.
///
/// The objective is recorded on a fresh [`Tape`] whose leaves are the outputs
/// at `queries`; its adjoints are then pulled back through the model.
pub fn grad_params<M, F>(model: &M, theta: &[f64], queries: &[Query], objective: F) -> Result<(f64, Vec<f64>)>
where
    M: FieldModel,
    F: for<'t> Fn(&'t Tape, &[OutputVars<'t>]) -> Var<'t>,
{
    check_len("theta", model.n_params(), theta.len())?;
    let out = model.eval(theta, queries)?;
    let tape = Tape::new();
    let vars: Vec<OutputVars<'_>> = (0..queries.len())
        .map(|q| OutputVars {
            u: tape.var(out.u[q]),
            v: tape.var(out.v[q]),
            du_dt: tape.var(out.du_dt[q]),
            dv_dt: tape.var(out.dv_dt[q]),
        })
        .collect();
    let value = objective(&tape, &vars);
    if !value.value().is_finite() {
        return Err(Error::NonFinite {
            context: "objective value",
            location: "tape output".into(),
        });
    }
    let adj = tape.gradient(value);
    let mut cot = FieldOutputs::zeros(queries.len());
    for (q, vars) in vars.iter().enumerate() {
        cot.u[q] = adj.wrt(&vars.u);
        cot.v[q] = adj.wrt(&vars.v);
        cot.du_dt[q] = adj.wrt(&vars.du_dt);
        cot.dv_dt[q] = adj.wrt(&vars.dv_dt);
    }
    let grad = model.pullback(theta, queries, &cot)?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "parameter gradient",
            location: format!("index {i}"),
        });
    }
    Ok((value.value(), grad))
}
