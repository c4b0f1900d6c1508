use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FieldModel, FieldOutputs, InputScaling, ParamVector, Query};
use crate::error::{check_len, Error, Result};

/// Fully connected network `(x, y, z, t) -> (u, v)` with `tanh` hidden layers
/// and a linear output layer.
///
/// Parameters are stored layer by layer: the `n_out x n_in` weight matrix in
/// row-major order followed by the `n_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFieldModel {
    layer_sizes: Vec<usize>,
    scaling: InputScaling,
}

/// Per-layer forward record kept for the reverse sweep. Arrays are `batch x width`.
struct LayerRecord {
    input: Vec<f64>,
    input_dot: Vec<f64>,
    /// Post-activation output (pre-activation for the output layer).
    output: Vec<f64>,
    /// Time tangent of the pre-activation.
    pre_dot: Vec<f64>,
}

struct ForwardTape {
    layers: Vec<LayerRecord>,
    batch: usize,
}

impl MlpFieldModel {
    pub fn new(layer_sizes: Vec<usize>, scaling: InputScaling) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::invalid(
                "layer_sizes",
                "need an input, at least one hidden and an output layer",
            ));
        }
        if layer_sizes[0] != 4 || *layer_sizes.last().unwrap() != 2 {
            return Err(Error::invalid("layer_sizes", "input width must be 4 and output width 2"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer_sizes", "zero-width layer"));
        }
        Ok(MlpFieldModel {
            layer_sizes,
            scaling,
        })
    }

    /// `[4, h_1, .., h_k, 2]` from hidden widths.
    pub fn with_hidden(hidden: &[usize], scaling: InputScaling) -> Result<Self> {
        let mut sizes = vec![4];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        Self::new(sizes, scaling)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(self.n_params());
        for w in self.layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for _ in 0..n_in * n_out {
                theta.push(rng.random_range(-limit..limit));
            }
            theta.extend(std::iter::repeat_n(0.0, n_out));
        }
        ParamVector::new(theta).expect("finite initialization")
    }

    fn forward_tape(&self, theta: &[f64], queries: &[Query]) -> Result<ForwardTape> {
        check_len("mlp theta", self.n_params(), theta.len())?;
        let batch = queries.len();
        let t_slope = self.scaling.slope(3);
        let mut input = Vec::with_capacity(batch * 4);
        let mut input_dot = vec![0.0; batch * 4];
        for (b, q) in queries.iter().enumerate() {
            input.extend_from_slice(&self.scaling.apply(q));
            input_dot[b * 4 + 3] = t_slope;
        }

        let n_layers = self.layer_sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &theta[offset..offset + n_in * n_out];
            let bias = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let hidden = l + 1 < n_layers;

            let mut output = vec![0.0; batch * n_out];
            let mut pre_dot = vec![0.0; batch * n_out];
            for b in 0..batch {
                let a = &input[b * n_in..(b + 1) * n_in];
                let a_dot = &input_dot[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let mut z = bias[o];
                    let mut z_dot = 0.0;
                    for i in 0..n_in {
                        z += row[i] * a[i];
                        z_dot += row[i] * a_dot[i];
                    }
                    output[b * n_out + o] = if hidden { z.tanh() } else { z };
                    pre_dot[b * n_out + o] = z_dot;
                }
            }
            let next_dot: Vec<f64> = if hidden {
                output
                    .iter()
                    .zip(&pre_dot)
                    .map(|(&y, &zd)| (1.0 - y * y) * zd)
                    .collect()
            } else {
                pre_dot.clone()
            };
            let next_input = output.clone();
            layers.push(LayerRecord {
                input: std::mem::replace(&mut input, next_input),
                input_dot: std::mem::replace(&mut input_dot, next_dot),
                output,
                pre_dot,
            });
        }
        Ok(ForwardTape { layers, batch })
    }

    fn outputs(&self, tape: &ForwardTape) -> FieldOutputs {
        let last = tape.layers.last().expect("at least one layer");
        let mut out = FieldOutputs::zeros(tape.batch);
        for b in 0..tape.batch {
            out.u[b] = last.output[b * 2];
            out.v[b] = last.output[b * 2 + 1];
            out.du_dt[b] = last.pre_dot[b * 2];
            out.dv_dt[b] = last.pre_dot[b * 2 + 1];
        }
        out
    }

    fn reverse(&self, theta: &[f64], tape: &ForwardTape, cot: &FieldOutputs) -> Result<Vec<f64>> {
        cot.check(tape.batch)?;
        let batch = tape.batch;
        let mut grad = vec![0.0; theta.len()];
        let n_layers = self.layer_sizes.len() - 1;

        // cotangents of the current layer output value and its time tangent
        let mut bar = vec![0.0; batch * 2];
        let mut bar_dot = vec![0.0; batch * 2];
        for b in 0..batch {
            bar[b * 2] = cot.u[b];
            bar[b * 2 + 1] = cot.v[b];
            bar_dot[b * 2] = cot.du_dt[b];
            bar_dot[b * 2 + 1] = cot.dv_dt[b];
        }

        let mut offset = theta.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let w_off = offset;
            let b_off = offset + n_in * n_out;
            let rec = &tape.layers[l];
            let hidden = l + 1 < n_layers;

            // through the activation
            let (z_bar, z_dot_bar) = if hidden {
                let mut zb = vec![0.0; batch * n_out];
                let mut zdb = vec![0.0; batch * n_out];
                for k in 0..batch * n_out {
                    let y = rec.output[k];
                    let s = 1.0 - y * y;
                    zb[k] = bar[k] * s - 2.0 * bar_dot[k] * rec.pre_dot[k] * y * s;
                    zdb[k] = bar_dot[k] * s;
                }
                (zb, zdb)
            } else {
                (bar, bar_dot)
            };

            // through the affine map
            let weights = &theta[w_off..b_off];
            let mut in_bar = vec![0.0; batch * n_in];
            let mut in_dot_bar = vec![0.0; batch * n_in];
            for b in 0..batch {
                let a = &rec.input[b * n_in..(b + 1) * n_in];
                let a_dot = &rec.input_dot[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let zb = z_bar[b * n_out + o];
                    let zdb = z_dot_bar[b * n_out + o];
                    if zb == 0.0 && zdb == 0.0 {
                        continue;
                    }
                    grad[b_off + o] += zb;
                    let g_row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for i in 0..n_in {
                        g_row[i] += zb * a[i] + zdb * a_dot[i];
                    }
                    if l > 0 {
                        let row = &weights[o * n_in..(o + 1) * n_in];
                        let ib = &mut in_bar[b * n_in..(b + 1) * n_in];
                        for i in 0..n_in {
                            ib[i] += row[i] * zb;
                        }
                        let idb = &mut in_dot_bar[b * n_in..(b + 1) * n_in];
                        for i in 0..n_in {
                            idb[i] += row[i] * zdb;
                        }
                    }
                }
            }
            bar = in_bar;
            bar_dot = in_dot_bar;
        }
        Ok(grad)
    }
}

impl FieldModel for MlpFieldModel {
    fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn eval(&self, theta: &[f64], queries: &[Query]) -> Result<FieldOutputs> {
        let tape = self.forward_tape(theta, queries)?;
        Ok(self.outputs(&tape))
    }

    fn pullback(&self, theta: &[f64], queries: &[Query], cot: &FieldOutputs) -> Result<Vec<f64>> {
        let tape = self.forward_tape(theta, queries)?;
        self.reverse(theta, &tape, cot)
    }

    fn value_and_pullback<T>(
        &self,
        theta: &[f64],
        queries: &[Query],
        objective: impl FnOnce(&FieldOutputs) -> Result<(T, FieldOutputs)>,
    ) -> Result<(T, Vec<f64>)> {
        let tape = self.forward_tape(theta, queries)?;
        let (value, cot) = objective(&self.outputs(&tape))?;
        let grad = self.reverse(theta, &tape, &cot)?;
        Ok((value, grad))
    }
}
