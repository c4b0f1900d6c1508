//! The weighted inverse objective
//!
//! `L(theta) = lambda_d * sum_i w_i l_i(theta) + lambda_p * L_phys(theta)`
//!
//! where `l_i` is the squared misfit of body sensor `i` over all frames and
//! `L_phys` is the mean squared Aliev–Panfilov residual over a collocation set.
//! The model is evaluated once on the full (heart node, frame) grid; data and
//! physics terms both read from that grid.

mod physics;
mod train;

pub use train::{train, TrainConfig, TrainReport};

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{Point3, TransferMatrix, WeightedGraph};
use crate::model::{FieldModel, FieldOutputs, Query};
use crate::simkit::ApParams;

/// Per-sensor data weights `w_i >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SensorWeights(Vec<f64>);

impl SensorWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid(
                "sensor weights",
                format!("weight {i} must be finite and non-negative, got {}", w[i]),
            ));
        }
        Ok(SensorWeights(w))
    }

    pub fn ones(n: usize) -> Self {
        SensorWeights(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy with weight `i` replaced.
    pub fn with(&self, i: usize, value: f64) -> Result<Self> {
        if i >= self.0.len() {
            return Err(Error::IndexOutOfRange {
                context: "sensor weight",
                index: i,
                len: self.0.len(),
            });
        }
        let mut w = self.0.clone();
        w[i] = value;
        SensorWeights::new(w)
    }
}

impl TryFrom<Vec<f64>> for SensorWeights {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        SensorWeights::new(w)
    }
}

impl From<SensorWeights> for Vec<f64> {
    fn from(w: SensorWeights) -> Vec<f64> {
        w.0
    }
}

/// Global multipliers of the data and physics terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 1.0,
            lambda_p: 1.0,
        }
    }
}

impl LossWeights {
    /// `lambda_d > 0`; `lambda_p = 0` switches the physics term off.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d > 0.0 && self.lambda_d.is_finite()) {
            return Err(Error::invalid("lambda_d", format!("must be positive, got {}", self.lambda_d)));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return Err(Error::invalid("lambda_p", format!("must be non-negative, got {}", self.lambda_p)));
        }
        Ok(())
    }
}

/// Collocation points as `(heart node, frame)` pairs on the model grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub points: Vec<(usize, usize)>,
    pub seed: u64,
}

impl CollocationSet {
    /// `n` distinct pairs drawn uniformly from the `n_nodes x n_frames` grid.
    pub fn sample(n_nodes: usize, n_frames: usize, n: usize, seed: u64) -> Result<Self> {
        let total = n_nodes * n_frames;
        if n > total {
            return Err(Error::invalid(
                "n_collocation",
                format!("{n} points requested but the grid has only {total}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = rand::seq::index::sample(&mut rng, total, n).into_vec();
        flat.sort_unstable();
        let points = flat.into_iter().map(|k| (k % n_nodes, k / n_nodes)).collect();
        Ok(CollocationSet { points, seed })
    }

    /// Every grid pair, frame-major.
    pub fn full_grid(n_nodes: usize, n_frames: usize) -> Self {
        let points = (0..n_frames)
            .flat_map(|f| (0..n_nodes).map(move |i| (i, f)))
            .collect();
        CollocationSet { points, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Heart geometry, forward operator and measurements of one inverse problem.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    heart_coords: Vec<Point3>,
    graph: WeightedGraph,
    r: TransferMatrix,
    times: Vec<f64>,
    y: Array2<f64>,
    ap: ApParams,
    sensor_ids: Vec<usize>,
    queries: Vec<Query>,
}

impl InverseProblem {
    /// `y` is `N_b x N_t`; `r` is `N_b x N_h`.
    pub fn new(
        heart_coords: Vec<Point3>,
        graph: WeightedGraph,
        r: TransferMatrix,
        times: Vec<f64>,
        y: Array2<f64>,
        ap: ApParams,
    ) -> Result<Self> {
        ap.validate()?;
        check_len("heart graph nodes", heart_coords.len(), graph.node_count())?;
        check_len("transfer matrix columns", heart_coords.len(), r.cols())?;
        check_len("measurement rows", r.rows(), y.nrows())?;
        check_len("measurement frames", times.len(), y.ncols())?;
        if times.is_empty() {
            return Err(Error::invalid("times", "at least one frame is required"));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid("times", format!("not strictly increasing at frame {}", k + 1)));
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "measurements",
                location: "y".into(),
            });
        }
        let queries = times
            .iter()
            .flat_map(|&t| heart_coords.iter().map(move |&coords| Query { coords, t }))
            .collect();
        let sensor_ids = (0..r.rows()).collect();
        Ok(InverseProblem {
            heart_coords,
            graph,
            r,
            times,
            y,
            ap,
            sensor_ids,
            queries,
        })
    }

    /// Restriction to the listed sensors (positions in this problem), keeping their ids.
    pub fn subset(&self, sensors: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_sensors()];
        for &s in sensors {
            if s >= self.n_sensors() {
                return Err(Error::IndexOutOfRange {
                    context: "sensor subset",
                    index: s,
                    len: self.n_sensors(),
                });
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::invalid("sensor subset", format!("sensor {s} listed twice")));
            }
        }
        let mut out = self.clone();
        out.r = self.r.select_rows(sensors)?;
        out.y = self.y.select(ndarray::Axis(0), sensors);
        out.sensor_ids = sensors.iter().map(|&s| self.sensor_ids[s]).collect();
        Ok(out)
    }

    /// Same geometry with other measurements.
    pub fn with_measurements(&self, y: Array2<f64>) -> Result<Self> {
        check_len("measurement rows", self.n_sensors(), y.nrows())?;
        check_len("measurement frames", self.n_frames(), y.ncols())?;
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    pub fn n_sensors(&self) -> usize {
        self.r.rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.heart_coords.len()
    }

    pub fn n_frames(&self) -> usize {
        self.times.len()
    }

    pub fn heart_coords(&self) -> &[Point3] {
        &self.heart_coords
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn transfer(&self) -> &TransferMatrix {
        &self.r
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measurements(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn ap_params(&self) -> &ApParams {
        &self.ap
    }

    /// Original body-node ids of the sensors, in problem order.
    pub fn sensor_ids(&self) -> &[usize] {
        &self.sensor_ids
    }

    /// Model evaluation grid, frame-major: slot `f * N_h + i` is node `i` at frame `f`.
    pub fn grid_queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn check_collocation(&self, coll: &CollocationSet) -> Result<()> {
        for &(i, f) in &coll.points {
            if i >= self.n_nodes() {
                return Err(Error::IndexOutOfRange {
                    context: "collocation node",
                    index: i,
                    len: self.n_nodes(),
                });
            }
            if f >= self.n_frames() {
                return Err(Error::IndexOutOfRange {
                    context: "collocation frame",
                    index: f,
                    len: self.n_frames(),
                });
            }
        }
        Ok(())
    }

    /// Grid values of one output channel as an `N_h x N_t` array.
    pub fn grid_field(&self, values: &[f64]) -> Result<Array2<f64>> {
        check_len("grid values", self.queries.len(), values.len())?;
        let (nh, nt) = (self.n_nodes(), self.n_frames());
        Ok(Array2::from_shape_fn((nh, nt), |(i, f)| values[f * nh + i]))
    }

    /// Body-surface residuals `y - R u_hat` (`N_b x N_t`).
    fn data_residuals(&self, outs: &FieldOutputs, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let u = self.grid_field(&outs.u)?;
        Ok(&y - &self.r.entries().dot(&u))
    }

    /// Adds `scale * R^T res` to the `u` channel of a grid cotangent.
    fn add_data_cotangent(&self, res: &Array2<f64>, cot: &mut FieldOutputs) {
        let back = self.r.entries().t().dot(res);
        let nh = self.n_nodes();
        for ((i, f), val) in back.indexed_iter() {
            cot.u[f * nh + i] += val;
        }
    }
}

/// Decomposed objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    /// `l_i` per sensor.
    pub sensor: Vec<f64>,
    /// `sum_i w_i l_i`.
    pub data: f64,
    pub physics: f64,
    pub total: f64,
}

/// Full objective bound to one problem and weighting.
pub struct Objective<'a, M: FieldModel> {
    pub model: &'a M,
    pub problem: &'a InverseProblem,
    pub weights: &'a SensorWeights,
    pub loss_weights: LossWeights,
    pub collocation: &'a CollocationSet,
}

impl<'a, M: FieldModel> Objective<'a, M> {
    pub fn new(
        model: &'a M,
        problem: &'a InverseProblem,
        weights: &'a SensorWeights,
        loss_weights: LossWeights,
        collocation: &'a CollocationSet,
    ) -> Result<Self> {
        check_len("sensor weights", problem.n_sensors(), weights.len())?;
        loss_weights.validate()?;
        problem.check_collocation(collocation)?;
        Ok(Objective {
            model,
            problem,
            weights,
            loss_weights,
            collocation,
        })
    }

    pub fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn physics_active(&self) -> bool {
        self.loss_weights.lambda_p > 0.0 && !self.collocation.is_empty()
    }

    /// Loss parts and the output cotangent `dL/d outputs` on the grid.
    fn parts_and_cotangent(&self, outs: &FieldOutputs) -> Result<(LossParts, FieldOutputs)> {
        let p = self.problem;
        let res = p.data_residuals(outs, p.y.view())?;
        let sensor: Vec<f64> = res.rows().into_iter().map(|r| r.dot(&r)).collect();
        let w = self.weights.as_slice();
        let data: f64 = sensor.iter().zip(w).map(|(l, w)| w * l).sum();

        let mut cot = FieldOutputs::zeros(outs.len());
        let lw = self.loss_weights;
        let mut scaled = res;
        for (mut row, &wi) in scaled.rows_mut().into_iter().zip(w) {
            row *= -2.0 * lw.lambda_d * wi;
        }
        p.add_data_cotangent(&scaled, &mut cot);

        let mut physics = 0.0;
        if self.physics_active() {
            let nf = self.collocation.len() as f64;
            let scale = lw.lambda_p / nf;
            let nh = p.n_nodes();
            for &(i, f) in &self.collocation.points {
                let local = physics::local_residual(&p.graph, &p.ap, outs, f * nh, i)?;
                physics += local.squared();
                local.add_gradient(scale, &mut cot);
            }
            physics /= nf;
        }
        let total = lw.lambda_d * data + lw.lambda_p * physics;
        Ok((
            LossParts {
                sensor,
                data,
                physics,
                total,
            },
            cot,
        ))
    }

    pub fn parts(&self, theta: &[f64]) -> Result<LossParts> {
        let outs = self.eval(theta)?;
        Ok(self.parts_and_cotangent(&outs)?.0)
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.parts(theta)?.total)
    }

    /// `(L, dL/dtheta)` from one forward pass and one reverse pass.
    pub fn value_and_grad(&self, theta: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        check_len("theta", self.n_params(), theta.len())?;
        let (parts, grad) = self.model.value_and_pullback(theta, self.problem.grid_queries(), |outs| {
            self.parts_and_cotangent(outs)
        })?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: "loss gradient",
                location: format!("parameter {i}"),
            });
        }
        Ok((parts, grad))
    }

    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(theta)?.1)
    }

    fn eval(&self, theta: &[f64]) -> Result<FieldOutputs> {
        check_len("theta", self.n_params(), theta.len())?;
        self.model.eval(theta, self.problem.grid_queries())
    }

    /// `(l_i, grad l_i)` for every sensor.
    pub fn sensor_grads(&self, theta: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        let outs = self.eval(theta)?;
        let p = self.problem;
        let res = p.data_residuals(&outs, p.y.view())?;
        let queries = p.grid_queries();
        (0..p.n_sensors())
            .map(|i| {
                let mut one = Array2::zeros(res.dim());
                one.row_mut(i).assign(&(&res.row(i) * -2.0));
                let mut cot = FieldOutputs::zeros(outs.len());
                p.add_data_cotangent(&one, &mut cot);
                let g = self.model.pullback(theta, queries, &cot)?;
                let l = res.row(i).dot(&res.row(i));
                Ok((l, g))
            })
            .collect()
    }

    /// `E = ||y_ref - R u_hat||^2` and its gradient; `y_ref` defaults to the measurements.
    pub fn error_metric_and_grad(
        &self,
        theta: &[f64],
        reference: Option<ArrayView2<'_, f64>>,
    ) -> Result<(f64, Vec<f64>)> {
        let p = self.problem;
        let y = reference.unwrap_or_else(|| p.y.view());
        if y.dim() != p.y.dim() {
            return Err(Error::invalid(
                "reference measurements",
                format!("shape {:?} does not match {:?}", y.dim(), p.y.dim()),
            ));
        }
        self.model.value_and_pullback(theta, p.grid_queries(), |outs| {
            let res = p.data_residuals(outs, y)?;
            let e = res.iter().map(|x| x * x).sum();
            let mut cot = FieldOutputs::zeros(outs.len());
            p.add_data_cotangent(&(res * -2.0), &mut cot);
            Ok((e, cot))
        })
    }

    /// Exact `H v` for models that are linear in `theta`.
    pub fn exact_hvp(&self, theta: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        let Some(lin) = self.model.as_linear() else {
            return Err(Error::Unsupported(
                "exact Hessian products need a model that is linear in its parameters".into(),
            ));
        };
        check_len("hvp direction", self.n_params(), dir.len())?;
        let p = self.problem;
        let queries = p.grid_queries();
        let outs = lin.eval(theta, queries)?;
        let d_out = lin.eval(dir, queries)?;
        let lw = self.loss_weights;

        let mut h_out = FieldOutputs::zeros(outs.len());
        let du = p.grid_field(&d_out.u)?;
        let mut rdu = p.r.entries().dot(&du);
        for (mut row, &wi) in rdu.rows_mut().into_iter().zip(self.weights.as_slice()) {
            row *= 2.0 * lw.lambda_d * wi;
        }
        p.add_data_cotangent(&rdu, &mut h_out);

        if self.physics_active() {
            let scale = lw.lambda_p / self.collocation.len() as f64;
            let nh = p.n_nodes();
            for &(i, f) in &self.collocation.points {
                let local = physics::local_residual(&p.graph, &p.ap, &outs, f * nh, i)?;
                local.add_hessian_product(scale, &d_out, &mut h_out);
            }
        }
        lin.pullback(theta, queries, &h_out)
    }
}

/// `l_i = sum_t (y_i(t) - [R u_hat]_i(t))^2`.
pub fn sensor_loss<M: FieldModel>(model: &M, theta: &[f64], problem: &InverseProblem, i: usize) -> Result<f64> {
    if i >= problem.n_sensors() {
        return Err(Error::IndexOutOfRange {
            context: "sensor",
            index: i,
            len: problem.n_sensors(),
        });
    }
    check_len("theta", model.n_params(), theta.len())?;
    let outs = model.eval(theta, problem.grid_queries())?;
    let res = problem.data_residuals(&outs, problem.y.view())?;
    Ok(res.row(i).dot(&res.row(i)))
}

/// Mean of `r_u^2 + r_v^2` over the collocation set (zero for an empty set).
pub fn physics_loss<M: FieldModel>(
    model: &M,
    theta: &[f64],
    problem: &InverseProblem,
    coll: &CollocationSet,
) -> Result<f64> {
    problem.check_collocation(coll)?;
    check_len("theta", model.n_params(), theta.len())?;
    if coll.is_empty() {
        return Ok(0.0);
    }
    let outs = model.eval(theta, problem.grid_queries())?;
    let nh = problem.n_nodes();
    let mut sum = 0.0;
    for &(i, f) in &coll.points {
        sum += physics::local_residual(&problem.graph, &problem.ap, &outs, f * nh, i)?.squared();
    }
    Ok(sum / coll.len() as f64)
}

/// `lambda_d sum_i w_i l_i + lambda_p L_phys`.
pub fn total_loss<M: FieldModel>(
    model: &M,
    theta: &[f64],
    problem: &InverseProblem,
    w: &SensorWeights,
    lw: LossWeights,
    coll: &CollocationSet,
) -> Result<f64> {
    Objective::new(model, problem, w, lw, coll)?.value(theta)
}

/// `E = ||y - R u_hat||^2` over all sensors and frames.
pub fn error_metric<M: FieldModel>(model: &M, theta: &[f64], problem: &InverseProblem) -> Result<f64> {
    check_len("theta", model.n_params(), theta.len())?;
    let outs = model.eval(theta, problem.grid_queries())?;
    let res = problem.data_residuals(&outs, problem.y.view())?;
    Ok(res.iter().map(|x| x * x).sum())
}
