use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{check_len, Error, Result};
use crate::model::{FieldModel, ParamVector};

/// Full-batch Adam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Gradient-norm stopping tolerance; `None` means `1e-4 (1 + |L(theta_0)|)`.
    pub g_tol: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// On hitting `max_iters` without convergence, return the lowest-loss
    /// iterate instead of the last one.
    pub keep_best: bool,
    /// Seed for parameter initialization when the caller does not supply `theta_0`.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            max_iters: 20_000,
            g_tol: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            keep_best: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if let Some(g) = self.g_tol {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid("g_tol", "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta", "Adam decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        Ok(())
    }

    /// Tolerance for an objective whose initial value is `l0`.
    pub fn tolerance(&self, l0: f64) -> f64 {
        self.g_tol.unwrap_or(1e-4 * (1.0 + l0.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss and gradient norm at the returned iterate.
    pub final_loss: f64,
    pub final_grad_norm: f64,
    /// Adam steps taken.
    pub iterations: usize,
    /// Step index of the returned iterate.
    pub returned_iteration: usize,
    pub converged: bool,
    pub g_tol: f64,
    /// Loss at every evaluated iterate, starting with `theta_0`.
    pub history: Vec<f64>,
}

impl TrainReport {
    /// Running minimum of the loss history.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::INFINITY, |best, &l| {
                *best = best.min(l);
                Some(*best)
            })
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizes the objective from `theta0`. Returns the converged iterate, or at
/// `max_iters` the last (or lowest-loss, see [`TrainConfig::keep_best`]) one.
pub fn train<M: FieldModel>(
    objective: &Objective<'_, M>,
    theta0: &ParamVector,
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainReport)> {
    cfg.validate()?;
    check_len("theta_0", objective.n_params(), theta0.len())?;
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; theta.len()];
    let mut s = vec![0.0; theta.len()];
    let mut history = Vec::new();
    let mut g_tol = f64::NAN;
    let mut step = 0;
    let mut best: Option<(Vec<f64>, f64, f64, usize)> = None;
    loop {
        let (parts, grad) = match objective.value_and_grad(&theta) {
            Ok(r) => r,
            Err(e) if e.is_numerical() => return Err(diverged(step, history)),
            Err(e) => return Err(e),
        };
        if !parts.total.is_finite() {
            history.push(parts.total);
            return Err(diverged(step, history));
        }
        history.push(parts.total);
        if step == 0 {
            g_tol = cfg.tolerance(parts.total);
        }
        let gn = norm(&grad);
        let converged = gn <= g_tol;
        if cfg.keep_best && best.as_ref().is_none_or(|b| parts.total < b.1) {
            best = Some((theta.clone(), parts.total, gn, step));
        }
        if converged || step == cfg.max_iters {
            log::debug!("training stopped after {step} steps: loss {:e}, |grad| {gn:e}", parts.total);
            let (theta, loss, gn, at) = match best {
                Some(b) if !converged => b,
                _ => (theta, parts.total, gn, step),
            };
            let report = TrainReport {
                final_loss: loss,
                final_grad_norm: gn,
                iterations: step,
                returned_iteration: at,
                converged,
                g_tol,
                history,
            };
            return Ok((ParamVector::new(theta)?, report));
        }
        step += 1;
        let c1 = 1.0 - cfg.beta1.powi(step as i32);
        let c2 = 1.0 - cfg.beta2.powi(step as i32);
        for k in 0..theta.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
            s[k] = cfg.beta2 * s[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let mh = m[k] / c1;
            let sh = s[k] / c2;
            theta[k] -= cfg.learning_rate * mh / (sh.sqrt() + cfg.epsilon);
        }
    }
}

fn diverged(iteration: usize, history: Vec<f64>) -> Error {
    let tail = history[history.len().saturating_sub(10)..].to_vec();
    Error::Diverged {
        iteration,
        history: tail,
    }
}
