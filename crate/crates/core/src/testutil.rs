//! Fixtures shared by unit tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{build_edge_graph, sphere_mesh, synth_transfer_matrix};
use crate::inverse::InverseProblem;
use crate::model::{InputScaling, MlpFieldModel};
use crate::simkit::ApParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-scale..scale))
}

/// Small sphere problem (8 heart nodes, 10 sensors) with random measurements.
pub fn sphere_problem(seed: u64, n_frames: usize) -> InverseProblem {
    let heart = sphere_mesh(8, 1.0).unwrap();
    let body = sphere_mesh(10, 1.6).unwrap();
    let graph = build_edge_graph(&heart).unwrap();
    let r = synth_transfer_matrix(&heart, &body, 1.0).unwrap();
    let times: Vec<f64> = (0..n_frames).map(|f| 0.5 * f as f64).collect();
    let y = random_array(&mut rng(seed), body.node_count(), n_frames, 0.5);
    InverseProblem::new(heart.nodes().to_vec(), graph, r, times, y, ApParams::default()).unwrap()
}

pub fn mlp_for(problem: &InverseProblem, hidden: &[usize]) -> MlpFieldModel {
    let scaling = InputScaling::from_data(problem.heart_coords(), problem.times());
    MlpFieldModel::with_hidden(hidden, scaling).unwrap()
}
