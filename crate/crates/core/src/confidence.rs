//! Per-sensor confidence from solver residuals and loss/gradient consistency.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::importance::{CgConfig, ImportanceScores};

/// Floor applied to losses and gradient norms before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-30;

/// Consistency constant turning a MAD into a normal standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceParams {
    pub rho_min: f64,
    pub rho_tol: f64,
    pub c_min_solve: f64,
    pub p_solve: f64,
    pub eta: f64,
    pub mad_floor: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        ConfidenceParams {
            rho_min: 1e-8,
            rho_tol: 1e-3,
            c_min_solve: 0.2,
            p_solve: 2.0,
            eta: 1.0,
            mad_floor: 1e-12,
        }
    }
}

impl ConfidenceParams {
    /// Defaults with the residual bounds taken from the solver settings.
    pub fn from_cg(cg: &CgConfig) -> Self {
        ConfidenceParams {
            rho_min: cg.abs_floor,
            rho_tol: cg.rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.rho_min && self.rho_min < self.rho_tol) {
            return Err(Error::invalid("rho", "need 0 < rho_min < rho_tol"));
        }
        if !(0.0 < self.c_min_solve && self.c_min_solve < 1.0) {
            return Err(Error::invalid("c_min_solve", "must lie in (0, 1)"));
        }
        if !(self.p_solve >= 1.0 && self.p_solve.is_finite()) {
            return Err(Error::invalid("p_solve", "must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "must be positive"));
        }
        if !(self.mad_floor > 0.0) {
            return Err(Error::invalid("mad_floor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScores {
    pub c_s: Vec<f64>,
    pub c_g: Vec<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
}

/// `C_S = c_min + (1 - c_min)(1 - t)^p` with `t` the clipped log-position of
/// `r_rel` between `rho_min` and `rho_tol`. Zero residuals count as `rho_min`;
/// NaN counts as the worst case.
pub fn solve_confidence(r_rel: &[f64], p: &ConfidenceParams) -> Vec<f64> {
    let (lo, hi) = (p.rho_min.ln(), p.rho_tol.ln());
    r_rel
        .iter()
        .map(|&r| {
            let t = if r.is_nan() {
                1.0
            } else if r <= 0.0 {
                0.0
            } else {
                ((r.ln() - lo) / (hi - lo)).clamp(0.0, 1.0)
            };
            p.c_min_solve + (1.0 - p.c_min_solve) * (1.0 - t).powf(p.p_solve)
        })
        .collect()
}

/// Median of a non-empty sample; even sizes average the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Returns `(C_G, s, z)`.
///
/// `s_i = ln g_i - ln l_i` is standardized by its median and
/// `1.4826 max(MAD, mad_floor)`; only positive deviations are penalized.
pub fn gradient_confidence(l: &[f64], g: &[f64], p: &ConfidenceParams) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_len("gradient norms", l.len(), g.len())?;
    if l.is_empty() {
        return Ok((vec![], vec![], vec![]));
    }
    let s: Vec<f64> = l
        .iter()
        .zip(g)
        .map(|(&l, &g)| g.max(LOG_FLOOR).ln() - l.max(LOG_FLOOR).ln())
        .collect();
    if let Some(i) = s.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "mismatch score",
            location: format!("sensor {i}"),
        });
    }
    let med = median(&s);
    let dev: Vec<f64> = s.iter().map(|x| (x - med).abs()).collect();
    let scale = MAD_SCALE * median(&dev).max(p.mad_floor);
    let z: Vec<f64> = s.iter().map(|x| (x - med) / scale).collect();
    let c_g = z
        .iter()
        .map(|&z| (-p.eta * z.max(0.0)).exp().max(f64::MIN_POSITIVE))
        .collect();
    Ok((c_g, s, z))
}

pub fn combine_confidence(c_s: &[f64], c_g: &[f64]) -> Result<Vec<f64>> {
    check_len("gradient confidence", c_s.len(), c_g.len())?;
    Ok(c_s.iter().zip(c_g).map(|(a, b)| a * b).collect())
}

/// Both confidence components for a set of raw scores.
pub fn confidence_scores(scores: &ImportanceScores, p: &ConfidenceParams) -> Result<ConfidenceScores> {
    p.validate()?;
    let c_s = solve_confidence(&scores.residuals(), p);
    let (c_g, s, z) = gradient_confidence(&scores.loss, &scores.grad_norm, p)?;
    let c = combine_confidence(&c_s, &c_g)?;
    Ok(ConfidenceScores { c_s, c_g, c, s, z })
}
