//! First-order-optimality importance scores.
//!
//! At a trained optimum `theta*` of the weighted objective, the sensitivity of
//! an error metric `E` to the weight of sensor `i` is
//! `dE/dw_i = -grad E . (H + mu I)^-1 grad l_i`, and the score is its magnitude.
//! Each sensor gets its own conjugate-gradient solve so that the solver
//! diagnostics are available per sensor.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::inverse::Objective;
use crate::model::FieldModel;

/// How Hessian-vector products are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMode {
    /// Central differences of the gradient along `v`.
    FiniteDifference,
    /// Closed form; only for models linear in their parameters.
    ExactQuadratic,
    /// Dense Hessian from central gradient differences along each coordinate,
    /// symmetrized once and reused for every product.
    Assembled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvpConfig {
    pub fd_step_scale: f64,
    pub damping: f64,
    pub mode: HvpMode,
}

impl Default for HvpConfig {
    fn default() -> Self {
        HvpConfig {
            fd_step_scale: 1e-4,
            damping: 1e-4,
            mode: HvpMode::FiniteDifference,
        }
    }
}

impl HvpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fd_step_scale > 0.0 && self.fd_step_scale.is_finite()) {
            return Err(Error::invalid("fd_step_scale", "must be positive"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("damping", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    /// `rho_tol`.
    pub rel_tol: f64,
    pub max_iters: usize,
    /// `rho_min`, the smallest residual regarded as attainable.
    pub abs_floor: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            rel_tol: 1e-3,
            max_iters: 500,
            abs_floor: 1e-8,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.abs_floor && self.abs_floor < self.rel_tol && self.rel_tol < 1.0) {
            return Err(Error::invalid(
                "cg",
                format!(
                    "need 0 < abs_floor < rel_tol < 1, got abs_floor = {}, rel_tol = {}",
                    self.abs_floor, self.rel_tol
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    /// `||b - A v|| / ||b||`, recomputed at exit.
    pub r_rel: f64,
    pub converged: bool,
    /// Stopped because `p^T A p <= 0`.
    pub negative_curvature: bool,
    pub solution: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(op: &impl Fn(&[f64]) -> Result<Vec<f64>>, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().all(|&v| v == 0.0) {
        return Ok(b.to_vec());
    }
    let ax = op(x)?;
    check_len("operator output", b.len(), ax.len())?;
    Ok(b.iter().zip(&ax).map(|(b, a)| b - a).collect())
}

/// Conjugate gradients for `A v = b` with `A` given as a product.
///
/// Runs until the residual drops to `rel_tol * ||b||` or `max_iters` steps.
/// A non-positive curvature direction ends the solve at the current iterate.
pub fn cg_solve(op: impl Fn(&[f64]) -> Result<Vec<f64>>, b: &[f64], cfg: &CgConfig) -> Result<CgReport> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "cg right-hand side",
            location: "b".into(),
        });
    }
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgReport {
            iterations: 0,
            r_rel: 0.0,
            converged: true,
            negative_curvature: false,
            solution: vec![0.0; n],
        });
    }
    let target = cfg.rel_tol * b_norm;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut negative_curvature = false;
    while iterations < cfg.max_iters {
        if rr.sqrt() <= target {
            // confirm against the true residual before stopping
            let true_r = residual(&op, b, &x)?;
            if norm(&true_r) <= target {
                break;
            }
            r = true_r;
            p = r.clone();
            rr = dot(&r, &r);
        }
        let ap = op(&p)?;
        check_len("operator output", n, ap.len())?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            if pap.is_nan() {
                return Err(Error::NonFinite {
                    context: "cg curvature",
                    location: format!("iteration {iterations}"),
                });
            }
            negative_curvature = true;
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        iterations += 1;
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "cg iterate",
                location: format!("iteration {iterations}, entry {k}"),
            });
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    let r_rel = norm(&residual(&op, b, &x)?) / b_norm;
    Ok(CgReport {
        iterations,
        r_rel,
        converged: r_rel <= cfg.rel_tol,
        negative_curvature,
        solution: x,
    })
}

/// Damped Hessian `(H + mu I)` of an objective at a fixed parameter vector.
pub struct HessianOperator<'o, 'a, M: FieldModel> {
    objective: &'o Objective<'a, M>,
    theta: Vec<f64>,
    cfg: HvpConfig,
    dense: Option<Array2<f64>>,
}

impl<'o, 'a, M: FieldModel> HessianOperator<'o, 'a, M> {
    pub fn new(objective: &'o Objective<'a, M>, theta: &[f64], cfg: HvpConfig) -> Result<Self> {
        cfg.validate()?;
        check_len("theta", objective.n_params(), theta.len())?;
        if cfg.mode == HvpMode::ExactQuadratic && objective.model.as_linear().is_none() {
            return Err(Error::Unsupported(
                "exact-quadratic Hessian products need a linear field model".into(),
            ));
        }
        let mut op = HessianOperator {
            objective,
            theta: theta.to_vec(),
            cfg,
            dense: None,
        };
        if cfg.mode == HvpMode::Assembled {
            op.dense = Some(op.assemble()?);
        }
        Ok(op)
    }

    fn assemble(&self) -> Result<Array2<f64>> {
        let n = self.theta.len();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                self.fd_product(&e)
            })
            .collect::<Result<_>>()?;
        let h = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (cols[j][i] + cols[i][j]));
        Ok(h)
    }

    fn fd_product(&self, v: &[f64]) -> Result<Vec<f64>> {
        let eps = self.cfg.fd_step_scale / norm(v);
        let shifted = |sign: f64| -> Vec<f64> { self.theta.iter().zip(v).map(|(t, d)| t + sign * eps * d).collect() };
        let gp = self.objective.grad(&shifted(1.0))?;
        let gm = self.objective.grad(&shifted(-1.0))?;
        Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
    }

    /// `(H + mu I) v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("hvp direction", self.theta.len(), v.len())?;
        if norm(v) == 0.0 {
            return Err(Error::invalid("hvp direction", "must be non-zero"));
        }
        let mut hv = match self.cfg.mode {
            HvpMode::FiniteDifference => self.fd_product(v)?,
            HvpMode::ExactQuadratic => self.objective.exact_hvp(&self.theta, v)?,
            HvpMode::Assembled => {
                let h = self.dense.as_ref().expect("assembled at construction");
                h.dot(&ndarray::ArrayView1::from(v)).to_vec()
            }
        };
        for (h, x) in hv.iter_mut().zip(v) {
            *h += self.cfg.damping * x;
        }
        if let Some(k) = hv.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "Hessian-vector product",
                location: format!("entry {k}"),
            });
        }
        Ok(hv)
    }

    pub fn config(&self) -> &HvpConfig {
        &self.cfg
    }
}

/// `(H + mu I) v` at `theta` in one call.
pub fn hvp<M: FieldModel>(objective: &Objective<'_, M>, theta: &[f64], v: &[f64], cfg: &HvpConfig) -> Result<Vec<f64>> {
    HessianOperator::new(objective, theta, *cfg)?.apply(v)
}

/// Raw scores and everything the confidence stage needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    /// `S_i`; NaN where the solve aborted.
    pub s: Vec<f64>,
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub reports: Vec<Option<CgReport>>,
    /// Error metric at `theta*`.
    pub error_metric: f64,
    pub damping: f64,
}

impl ImportanceScores {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Sensors whose solve aborted.
    pub fn aborted(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.reports[i].is_none()).collect()
    }

    /// Per-sensor `r_rel`, with aborted solves mapped to infinity.
    pub fn residuals(&self) -> Vec<f64> {
        self.reports
            .iter()
            .map(|r| r.as_ref().map_or(f64::INFINITY, |r| r.r_rel))
            .collect()
    }
}

/// Options that do not change the objective.
#[derive(Debug, Clone, Default)]
pub struct ScoreOptions<'r> {
    /// Reject `theta*` unless `||grad L|| <= tol`.
    pub optimality_tol: Option<f64>,
    /// Clean measurements for `E` instead of the training data.
    pub reference: Option<ArrayView2<'r, f64>>,
}

/// Verifies the first-order optimality hypothesis.
pub fn check_optimality<M: FieldModel>(objective: &Objective<'_, M>, theta: &[f64], tol: f64) -> Result<f64> {
    let g = norm(&objective.grad(theta)?);
    if g <= tol {
        Ok(g)
    } else {
        Err(Error::NotOptimal { grad_norm: g, tol })
    }
}

/// Per-sensor scores `S_i = |grad E . (H + mu I)^-1 grad l_i|`.
pub fn importance_scores<M: FieldModel>(
    objective: &Objective<'_, M>,
    theta: &[f64],
    hvp_cfg: &HvpConfig,
    cg_cfg: &CgConfig,
    opts: &ScoreOptions<'_>,
) -> Result<ImportanceScores> {
    if let Some(tol) = opts.optimality_tol {
        check_optimality(objective, theta, tol)?;
    }
    let (e, grad_e) = objective.error_metric_and_grad(theta, opts.reference)?;
    importance_scores_with_gradient(objective, theta, e, &grad_e, hvp_cfg, cg_cfg)
}

/// As [`importance_scores`] with a caller-supplied `grad E`.
pub fn importance_scores_with_gradient<M: FieldModel>(
    objective: &Objective<'_, M>,
    theta: &[f64],
    error_metric: f64,
    grad_e: &[f64],
    hvp_cfg: &HvpConfig,
    cg_cfg: &CgConfig,
) -> Result<ImportanceScores> {
    cg_cfg.validate()?;
    check_len("error gradient", objective.n_params(), grad_e.len())?;
    let op = HessianOperator::new(objective, theta, *hvp_cfg)?;
    let sensors = objective.sensor_grads(theta)?;
    let solved: Vec<(f64, Option<CgReport>)> = sensors
        .par_iter()
        .enumerate()
        .map(|(i, (_, g))| match cg_solve(|v| op.apply(v), g, cg_cfg) {
            Ok(rep) => Ok((dot(grad_e, &rep.solution).abs(), Some(rep))),
            Err(e) if e.is_numerical() => {
                log::warn!("solve for sensor {i} aborted: {e}");
                Ok((f64::NAN, None))
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let (s, reports) = solved.into_iter().unzip();
    Ok(ImportanceScores {
        s,
        loss: sensors.iter().map(|(l, _)| *l).collect(),
        grad_norm: sensors.iter().map(|(_, g)| norm(g)).collect(),
        reports,
        error_metric,
        damping: hvp_cfg.damping,
    })
}

/// Verification path: one solve `(H + mu I) g = grad E`, then `|g . grad l_i|`.
pub fn adjoint_scores<M: FieldModel>(
    objective: &Objective<'_, M>,
    theta: &[f64],
    hvp_cfg: &HvpConfig,
    cg_cfg: &CgConfig,
    opts: &ScoreOptions<'_>,
) -> Result<(Vec<f64>, CgReport)> {
    cg_cfg.validate()?;
    let (_, grad_e) = objective.error_metric_and_grad(theta, opts.reference)?;
    let op = HessianOperator::new(objective, theta, *hvp_cfg)?;
    let rep = cg_solve(|v| op.apply(v), &grad_e, cg_cfg)?;
    let s = objective
        .sensor_grads(theta)?
        .iter()
        .map(|(_, g)| dot(&rep.solution, g).abs())
        .collect();
    Ok((s, rep))
}
