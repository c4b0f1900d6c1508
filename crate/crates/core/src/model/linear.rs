use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FieldModel, FieldOutputs, Query};
use crate::error::{check_len, Error, Result};

/// Model whose outputs are exactly linear in `theta` at a fixed set of query points.
///
/// Row `q` of each design matrix maps `theta` to the corresponding output at
/// `queries[q]`; the time-derivative outputs have their own rows so that the
/// design can encode any linear field. Evaluating at a point outside the design
/// is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearDesign", into = "LinearDesign")]
pub struct LinearFieldModel {
    design: LinearDesign,
    index: HashMap<[u64; 4], usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LinearDesign {
    queries: Vec<Query>,
    u: Array2<f64>,
    v: Array2<f64>,
    du_dt: Array2<f64>,
    dv_dt: Array2<f64>,
}

fn key(q: &Query) -> [u64; 4] {
    // +0.0 and -0.0 compare equal as positions
    let norm = |x: f64| if x == 0.0 { 0.0f64.to_bits() } else { x.to_bits() };
    [norm(q.coords[0]), norm(q.coords[1]), norm(q.coords[2]), norm(q.t)]
}

impl TryFrom<LinearDesign> for LinearFieldModel {
    type Error = Error;
    fn try_from(d: LinearDesign) -> Result<Self> {
        LinearFieldModel::new(d.queries, d.u, d.v, d.du_dt, d.dv_dt)
    }
}

impl From<LinearFieldModel> for LinearDesign {
    fn from(m: LinearFieldModel) -> Self {
        m.design
    }
}

impl LinearFieldModel {
    pub fn new(
        queries: Vec<Query>,
        u: Array2<f64>,
        v: Array2<f64>,
        du_dt: Array2<f64>,
        dv_dt: Array2<f64>,
    ) -> Result<Self> {
        let shape = u.dim();
        if shape.1 == 0 {
            return Err(Error::invalid("linear design", "needs at least one parameter"));
        }
        check_len("linear design rows", queries.len(), shape.0)?;
        for (name, m) in [("v", &v), ("du_dt", &du_dt), ("dv_dt", &dv_dt)] {
            if m.dim() != shape {
                return Err(Error::invalid("linear design", format!("{name} design has shape {:?}, expected {shape:?}", m.dim())));
            }
        }
        for m in [&u, &v, &du_dt, &dv_dt] {
            if let Some(((i, j), _)) = m.indexed_iter().find(|(_, x)| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: "linear design",
                    location: format!("({i}, {j})"),
                });
            }
        }
        let mut index = HashMap::new();
        for (i, q) in queries.iter().enumerate() {
            if index.insert(key(q), i).is_some() {
                return Err(Error::invalid("linear design", format!("duplicate query point {i}")));
            }
        }
        Ok(LinearFieldModel {
            design: LinearDesign {
                queries,
                u,
                v,
                du_dt,
                dv_dt,
            },
            index,
        })
    }

    /// Design with only value rows; the time-derivative rows are zero.
    pub fn static_design(queries: Vec<Query>, u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        let zeros = Array2::zeros(u.dim());
        Self::new(queries, u, v, zeros.clone(), zeros)
    }

    pub fn queries(&self) -> &[Query] {
        &self.design.queries
    }

    fn rows(&self, queries: &[Query]) -> Result<Vec<usize>> {
        queries
            .iter()
            .map(|q| {
                self.index.get(&key(q)).copied().ok_or_else(|| {
                    Error::Unsupported(format!(
                        "linear model has no design row for query at {:?}, t = {}",
                        q.coords, q.t
                    ))
                })
            })
            .collect()
    }
}

impl FieldModel for LinearFieldModel {
    fn n_params(&self) -> usize {
        self.design.u.ncols()
    }

    fn eval(&self, theta: &[f64], queries: &[Query]) -> Result<FieldOutputs> {
        check_len("linear theta", self.n_params(), theta.len())?;
        let rows = self.rows(queries)?;
        let th = ndarray::ArrayView1::from(theta);
        let d = &self.design;
        let mut out = FieldOutputs::zeros(queries.len());
        for (q, &r) in rows.iter().enumerate() {
            out.u[q] = d.u.row(r).dot(&th);
            out.v[q] = d.v.row(r).dot(&th);
            out.du_dt[q] = d.du_dt.row(r).dot(&th);
            out.dv_dt[q] = d.dv_dt.row(r).dot(&th);
        }
        Ok(out)
    }

    fn pullback(&self, theta: &[f64], queries: &[Query], cot: &FieldOutputs) -> Result<Vec<f64>> {
        check_len("linear theta", self.n_params(), theta.len())?;
        cot.check(queries.len())?;
        let rows = self.rows(queries)?;
        let d = &self.design;
        let mut grad = ndarray::Array1::zeros(self.n_params());
        for (q, &r) in rows.iter().enumerate() {
            grad.scaled_add(cot.u[q], &d.u.row(r));
            grad.scaled_add(cot.v[q], &d.v.row(r));
            grad.scaled_add(cot.du_dt[q], &d.du_dt.row(r));
            grad.scaled_add(cot.dv_dt[q], &d.dv_dt.row(r));
        }
        Ok(grad.to_vec())
    }

    fn as_linear(&self) -> Option<&LinearFieldModel> {
        Some(self)
    }
}
