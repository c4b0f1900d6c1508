//! Ready-made problems: the one-parameter quadratic oracle and the synthetic
//! inverse-ECG benchmark on concentric spheres.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_edge_graph, sphere_mesh, synth_transfer_matrix, SurfaceMesh, TransferMatrix, WeightedGraph};
use crate::inverse::{CollocationSet, InverseProblem};
use crate::model::LinearFieldModel;
use crate::simkit::{add_noise, forward_observe, simulate_ap, ApParams, FieldTimeSeries, SimConfig};

/// One-parameter problem whose objective is
/// `lambda_d sum_i w_i (theta - y_i)^2 + lambda_p theta^2`.
///
/// A single isolated heart node is seen by every sensor (`R` is a column of
/// ones). At frame 0 the model is `u = theta`, which carries the data terms; at
/// frame 1 it is `u = v = 0` with `du/dt = theta`, so the one collocation point
/// there has residual `r_u = theta`, `r_v = 0`. The sensors measure 0 at frame 1.
pub fn quadratic_oracle(values: &[f64]) -> Result<(LinearFieldModel, InverseProblem, CollocationSet)> {
    if values.is_empty() {
        return Err(Error::invalid("oracle values", "need at least one sensor"));
    }
    let nb = values.len();
    let mut y = Array2::zeros((nb, 2));
    for (i, &v) in values.iter().enumerate() {
        y[[i, 0]] = v;
    }
    let problem = InverseProblem::new(
        vec![[0.0; 3]],
        WeightedGraph::from_edges(1, &[])?,
        TransferMatrix::new(Array2::ones((nb, 1)))?,
        vec![0.0, 1.0],
        y,
        ApParams::default(),
    )?;
    let col = |a: f64, b: f64| Array2::from_shape_vec((2, 1), vec![a, b]).expect("2x1");
    let model = LinearFieldModel::new(
        problem.grid_queries().to_vec(),
        col(1.0, 0.0),
        col(0.0, 0.0),
        col(0.0, 1.0),
        col(0.0, 0.0),
    )?;
    let coll = CollocationSet {
        points: vec![(0, 1)],
        seed: 0,
    };
    Ok((model, problem, coll))
}

/// Concentric-sphere inverse-ECG benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub heart_nodes: usize,
    pub body_nodes: usize,
    pub heart_radius: f64,
    pub body_radius: f64,
    pub kernel_scale: f64,
    pub ap: ApParams,
    pub sim: SimConfig,
    pub sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            heart_nodes: 64,
            body_nodes: 96,
            heart_radius: 1.0,
            body_radius: 1.5,
            kernel_scale: 1.0,
            ap: ApParams::default(),
            sim: SimConfig::default(),
            sigma: 0.01,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.ap.validate()?;
        if !(self.heart_radius > 0.0 && self.body_radius > self.heart_radius) {
            return Err(Error::invalid("body_radius", "must exceed a positive heart_radius"));
        }
        if !(self.kernel_scale > 0.0) {
            return Err(Error::invalid("kernel_scale", "must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be non-negative"));
        }
        Ok(())
    }
}

/// Everything generated for one benchmark seed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub heart: SurfaceMesh,
    pub body: SurfaceMesh,
    pub heart_graph: WeightedGraph,
    pub body_graph: WeightedGraph,
    pub transfer: TransferMatrix,
    pub truth: FieldTimeSeries,
    /// Noise-free body potentials.
    pub clean: Array2<f64>,
    /// Measurements used for training.
    pub noisy: Array2<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub ap: ApParams,
}

impl Dataset {
    pub fn problem(&self) -> Result<InverseProblem> {
        InverseProblem::new(
            self.heart.nodes().to_vec(),
            self.heart_graph.clone(),
            self.transfer.clone(),
            self.truth.times.clone(),
            self.noisy.clone(),
            self.ap,
        )
    }
}

/// Simulates the ground truth and draws the noisy measurements (noise seed = `seed`).
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let heart = sphere_mesh(spec.heart_nodes, spec.heart_radius)?;
    let body = sphere_mesh(spec.body_nodes, spec.body_radius)?;
    let heart_graph = build_edge_graph(&heart)?;
    let body_graph = build_edge_graph(&body)?;
    let transfer = synth_transfer_matrix(&heart, &body, spec.kernel_scale)?;
    let truth = simulate_ap(&heart_graph, &spec.ap, &spec.sim)?;
    let clean = forward_observe(&transfer, &truth)?;
    let noisy = add_noise(&clean, spec.sigma, seed)?.y;
    Ok(Dataset {
        heart,
        body,
        heart_graph,
        body_graph,
        transfer,
        truth,
        clean: clean.y,
        noisy,
        sigma: spec.sigma,
        seed,
        ap: spec.ap,
    })
}
