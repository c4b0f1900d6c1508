//! Aliev–Panfilov forward simulation on a surface graph, observation through
//! the transfer matrix, and seeded measurement noise.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{laplacian_unchecked, TransferMatrix, WeightedGraph};

/// Aliev–Panfilov coefficients (dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApParams {
    /// Diffusivity `D`.
    #[serde(rename = "D")]
    pub d: f64,
    pub k_r: f64,
    pub a: f64,
    pub e0: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl Default for ApParams {
    fn default() -> Self {
        ApParams {
            d: 0.1,
            k_r: 8.0,
            a: 0.15,
            e0: 0.002,
            mu1: 0.2,
            mu2: 0.3,
        }
    }
}

impl ApParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.d, self.k_r, self.a, self.e0, self.mu1, self.mu2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ap_params", "all coefficients must be finite"));
        }
        if self.d <= 0.0 {
            return Err(Error::invalid("D", format!("must be positive, got {}", self.d)));
        }
        if self.k_r <= 0.0 {
            return Err(Error::invalid("k_r", format!("must be positive, got {}", self.k_r)));
        }
        if self.mu2 <= 0.0 {
            return Err(Error::invalid("mu2", format!("must be positive, got {}", self.mu2)));
        }
        Ok(())
    }

    /// Coupling term `xi(u, v) = e0 + mu1 v / (u + mu2)`; `None` at the pole `u = -mu2`.
    pub fn xi(&self, u: f64, v: f64) -> Option<f64> {
        let den = u + self.mu2;
        if den == 0.0 {
            None
        } else {
            Some(self.e0 + self.mu1 * v / den)
        }
    }

    /// Cubic excitation term `u (u - a) (1 - u)`.
    pub fn excitation(&self, u: f64) -> f64 {
        u * (u - self.a) * (1.0 - u)
    }
}

/// Heart-surface fields sampled at `times`; arrays are `N_h x N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTimeSeries {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub times: Vec<f64>,
}

impl FieldTimeSeries {
    pub fn new(u: Array2<f64>, v: Array2<f64>, times: Vec<f64>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::invalid("fields", "u and v shapes differ"));
        }
        check_len("field frames", u.ncols(), times.len())?;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("times", "must be strictly increasing"));
        }
        Ok(FieldTimeSeries { u, v, times })
    }

    pub fn node_count(&self) -> usize {
        self.u.nrows()
    }

    pub fn frame_count(&self) -> usize {
        self.times.len()
    }
}

/// Body-surface potentials `N_b x N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: Array2<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Initial excitation: `u = 1` on these nodes, `0` elsewhere, `v = 0` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub nodes: Vec<usize>,
}

impl Default for Stimulus {
    fn default() -> Self {
        Stimulus { nodes: vec![0] }
    }
}

/// Time stepping for [`simulate_ap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: usize,
    /// Record a frame every this many steps (the initial state is frame 0).
    pub record_every: usize,
    pub stimulus: Stimulus,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.05,
            n_steps: 600,
            record_every: 40,
            stimulus: Stimulus::default(),
        }
    }
}

/// Right-hand side of the semi-discrete Aliev–Panfilov system.
///
/// `du/dt = (L u)_i + k_r u (u - a)(1 - u) - u v` and
/// `dv/dt = xi(u, v) (-v - k_r u (u - a - 1))`.
pub fn ap_rhs(
    u: &[f64],
    v: &[f64],
    graph: &WeightedGraph,
    p: &ApParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("ap_rhs u", graph.node_count(), u.len())?;
    check_len("ap_rhs v", graph.node_count(), v.len())?;
    let lap = laplacian_unchecked(graph, u, p.d);
    let mut du = Vec::with_capacity(u.len());
    let mut dv = Vec::with_capacity(u.len());
    for i in 0..u.len() {
        let (ui, vi) = (u[i], v[i]);
        let xi = p.xi(ui, vi).ok_or(Error::Singularity { node: i })?;
        du.push(lap[i] + p.k_r * p.excitation(ui) - ui * vi);
        dv.push(xi * (-vi - p.k_r * ui * (ui - p.a - 1.0)));
    }
    Ok((du, dv))
}

/// Explicit-Euler trajectory. The closed surface graph conserves flux, so the
/// no-flux boundary condition holds without an extra term.
pub fn simulate_ap(
    graph: &WeightedGraph,
    p: &ApParams,
    cfg: &SimConfig,
) -> Result<FieldTimeSeries> {
    p.validate()?;
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {}", cfg.dt)));
    }
    if cfg.record_every == 0 {
        return Err(Error::invalid("record_every", "must be at least 1"));
    }
    let n = graph.node_count();
    if let Some(&bad) = cfg.stimulus.nodes.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange {
            context: "stimulus node",
            index: bad,
            len: n,
        });
    }
    let bound = 2.0 / graph.max_weighted_degree(p.d);
    if cfg.dt >= bound {
        log::warn!(
            "dt = {} exceeds the explicit diffusion stability bound {bound:.4}",
            cfg.dt
        );
    }

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for &i in &cfg.stimulus.nodes {
        u[i] = 1.0;
    }
    let n_frames = cfg.n_steps / cfg.record_every + 1;
    let mut out_u = Array2::zeros((n, n_frames));
    let mut out_v = Array2::zeros((n, n_frames));
    let mut times = Vec::with_capacity(n_frames);
    let mut frame = 0;
    for step in 0..=cfg.n_steps {
        if step % cfg.record_every == 0 {
            out_u.column_mut(frame).assign(&ndarray::ArrayView1::from(&u));
            out_v.column_mut(frame).assign(&ndarray::ArrayView1::from(&v));
            times.push(step as f64 * cfg.dt);
            frame += 1;
        }
        if step == cfg.n_steps {
            break;
        }
        let (du, dv) = ap_rhs(&u, &v, graph, p)?;
        for i in 0..n {
            u[i] += cfg.dt * du[i];
            v[i] += cfg.dt * dv[i];
        }
        if let Some(i) = u.iter().chain(&v).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "simulation state",
                location: format!("step {}, entry {}", step + 1, i % n),
            });
        }
    }
    FieldTimeSeries::new(out_u, out_v, times)
}

/// `y[:, t] = R u[:, t]` for every frame, noise free.
pub fn forward_observe(r: &TransferMatrix, fields: &FieldTimeSeries) -> Result<MeasurementSet> {
    check_len("forward_observe heart nodes", r.cols(), fields.node_count())?;
    Ok(MeasurementSet {
        y: r.entries().dot(&fields.u),
        noise_sigma: 0.0,
        seed: 0,
    })
}

/// Adds i.i.d. `N(0, sigma^2)` noise from a seeded ChaCha stream (row-major order).
pub fn add_noise(m: &MeasurementSet, sigma: f64, seed: u64) -> Result<MeasurementSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be non-negative, got {sigma}")));
    }
    let mut y = m.y.clone();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        for val in y.iter_mut() {
            *val += normal.sample(&mut rng);
        }
    }
    Ok(MeasurementSet {
        y,
        noise_sigma: sigma,
        seed,
    })
}
