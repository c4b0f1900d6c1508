//! Harmonic extension of trusted importance values over the sensor graph.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::WeightedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationConfig {
    pub tau: f64,
    pub idw_epsilon: f64,
    pub delta: f64,
    pub max_iters: usize,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            tau: 0.5,
            idw_epsilon: 1e-12,
            delta: 1e-8,
            max_iters: 10_000,
        }
    }
}

impl ImputationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau", "must lie in [0, 1]"));
        }
        if !(self.idw_epsilon > 0.0) {
            return Err(Error::invalid("idw_epsilon", "must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta", "must be positive"));
        }
        Ok(())
    }
}

/// Trusted (`C_i >= tau`) and unreliable node sets, both ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub trusted: Vec<usize>,
    pub unreliable: Vec<usize>,
}

impl Partition {
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.trusted {
            m[i] = true;
        }
        m
    }
}

pub fn partition(c: &[f64], tau: f64) -> Result<Partition> {
    if let Some(i) = c.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "confidence",
            location: format!("sensor {i}"),
        });
    }
    let (trusted, unreliable): (Vec<usize>, Vec<usize>) = (0..c.len()).partition(|&i| c[i] >= tau);
    if trusted.is_empty() {
        return Err(Error::NoTrustedNodes { tau });
    }
    Ok(Partition { trusted, unreliable })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedScores {
    pub s_tilde: Vec<f64>,
    pub trusted_mask: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Unreliable nodes without any neighbour; they keep the trusted mean.
    pub isolated: Vec<usize>,
    /// Largest update of each sweep.
    pub max_changes: Vec<f64>,
}

/// Jacobi sweeps of inverse-distance-weighted neighbour averages over the
/// unreliable nodes, starting from the trusted mean.
pub fn impute(graph: &WeightedGraph, s: &[f64], part: &Partition, cfg: &ImputationConfig) -> Result<ImputedScores> {
    cfg.validate()?;
    let n = graph.node_count();
    check_len("raw scores", n, s.len())?;
    let mut seen = vec![0u8; n];
    for &i in part.trusted.iter().chain(&part.unreliable) {
        if i >= n {
            return Err(Error::IndexOutOfRange {
                context: "partition",
                index: i,
                len: n,
            });
        }
        seen[i] += 1;
    }
    if let Some(i) = seen.iter().position(|&c| c != 1) {
        return Err(Error::invalid("partition", format!("node {i} must be in exactly one set")));
    }
    if part.trusted.is_empty() {
        return Err(Error::NoTrustedNodes { tau: cfg.tau });
    }
    if let Some(&i) = part.trusted.iter().find(|&&i| !s[i].is_finite()) {
        return Err(Error::NonFinite {
            context: "trusted score",
            location: format!("sensor {i}"),
        });
    }

    let mut cur = s.to_vec();
    let mean = part.trusted.iter().map(|&i| s[i]).sum::<f64>() / part.trusted.len() as f64;
    for &i in &part.unreliable {
        cur[i] = mean;
    }
    let isolated: Vec<usize> = part
        .unreliable
        .iter()
        .copied()
        .filter(|&i| graph.neighbors(i).is_empty())
        .collect();
    let weights: Vec<Vec<(usize, f64)>> = part
        .unreliable
        .iter()
        .map(|&i| {
            graph
                .neighbors(i)
                .iter()
                .map(|&(j, d)| (j, 1.0 / (d + cfg.idw_epsilon)))
                .collect()
        })
        .collect();

    let mut iterations = 0;
    let mut converged = part.unreliable.is_empty();
    let mut max_changes = Vec::new();
    let mut next = cur.clone();
    while !converged && iterations < cfg.max_iters {
        let mut max_change: f64 = 0.0;
        for (k, &i) in part.unreliable.iter().enumerate() {
            let w = &weights[k];
            if w.is_empty() {
                continue;
            }
            let (num, den) = w
                .iter()
                .fold((0.0, 0.0), |(num, den), &(j, wij)| (num + wij * cur[j], den + wij));
            next[i] = num / den;
            max_change = max_change.max((next[i] - cur[i]).abs());
        }
        std::mem::swap(&mut cur, &mut next);
        iterations += 1;
        max_changes.push(max_change);
        converged = max_change < cfg.delta;
    }
    if !isolated.is_empty() {
        log::warn!("unreliable nodes without neighbours keep the trusted mean: {isolated:?}");
    }
    Ok(ImputedScores {
        s_tilde: cur,
        trusted_mask: part.mask(n),
        iterations,
        converged,
        isolated,
        max_changes,
    })
}
