//! End-to-end runs on the synthetic benchmark: train on all sensors, score,
//! refine, select, retrain on the selection and measure the reconstruction error.

use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::benchmark::{generate, Dataset, SyntheticSpec};
use crate::confidence::{confidence_scores, ConfidenceParams, ConfidenceScores};
use crate::error::{Error, Result};
use crate::importance::{importance_scores, CgConfig, HvpConfig, HvpMode, ImportanceScores, ScoreOptions};
use crate::impute::{impute, partition, ImputationConfig, ImputedScores};
use crate::inverse::{train, CollocationSet, InverseProblem, LossWeights, Objective, SensorWeights, TrainConfig, TrainReport};
use crate::model::{AnyFieldModel, FieldModel, InputScaling, MlpFieldModel, ParamVector};
use crate::selection::{relative_error, select, Band, SelectionContext, SelectionSpec, Strategy};

/// Which measurements the error metric `E` compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorReference {
    /// The noisy training measurements.
    #[default]
    Observed,
    /// Noise-free body potentials (study mode).
    Clean,
}

/// Numerical settings shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub benchmark: SyntheticSpec,
    /// Hidden layer widths of the field network.
    pub hidden: Vec<usize>,
    pub n_collocation: usize,
    pub loss_weights: LossWeights,
    /// Adam steps on the data term alone before the full objective is trained.
    pub pretrain_iters: usize,
    pub train: TrainConfig,
    /// Iterations of the warm-started retraining on a selection; `None` uses `train.max_iters`.
    pub retrain_iters: Option<usize>,
    /// Per-sensor loss weights; `None` means all ones.
    pub sensor_weights: Option<Vec<f64>>,
    pub hvp: HvpConfig,
    pub cg: CgConfig,
    /// `rho_min` and `rho_tol` are always taken from `cg`.
    pub confidence: ConfidenceParams,
    pub imputation: ImputationConfig,
    /// Refuse to score a model that is not a first-order optimum.
    pub require_optimality: bool,
    pub error_reference: ErrorReference,
}

impl Default for Settings {
    fn default() -> Self {
        let cg = CgConfig::default();
        Settings {
            benchmark: SyntheticSpec::default(),
            hidden: vec![32, 32, 32],
            n_collocation: 512,
            loss_weights: LossWeights::default(),
            pretrain_iters: 2000,
            train: TrainConfig::default(),
            retrain_iters: None,
            sensor_weights: None,
            hvp: HvpConfig::default(),
            cg,
            confidence: ConfidenceParams::from_cg(&cg),
            imputation: ImputationConfig::default(),
            require_optimality: true,
            error_reference: ErrorReference::Observed,
        }
    }
}

impl Settings {
    /// Loss weights for the sensors `ids` of the full sensor set.
    pub fn weights_for(&self, ids: &[usize]) -> Result<SensorWeights> {
        match &self.sensor_weights {
            None => Ok(SensorWeights::ones(ids.len())),
            Some(w) => {
                let picked = ids
                    .iter()
                    .map(|&i| {
                        w.get(i).copied().ok_or(Error::IndexOutOfRange {
                            context: "sensor_weights",
                            index: i,
                            len: w.len(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                SensorWeights::try_from(picked)
            }
        }
    }

    /// Copy with the residual bounds of `confidence` synchronized to `cg`.
    pub fn normalized(&self) -> Self {
        let mut s = self.clone();
        s.confidence.rho_min = s.cg.abs_floor;
        s.confidence.rho_tol = s.cg.rel_tol;
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "need at least one non-empty hidden layer"));
        }
        self.loss_weights.validate()?;
        self.train.validate()?;
        if self.retrain_iters == Some(0) {
            return Err(Error::invalid("retrain_iters", "must be at least 1"));
        }
        if let Some(w) = &self.sensor_weights {
            SensorWeights::try_from(w.clone())?;
        }
        self.hvp.validate()?;
        self.cg.validate()?;
        self.normalized().confidence.validate()?;
        self.imputation.validate()
    }
}

/// Seeds of the independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeeds {
    pub noise: u64,
    pub init: u64,
    pub collocation: u64,
}

impl StreamSeeds {
    pub fn from_seed(seed: u64) -> Self {
        StreamSeeds {
            noise: seed,
            init: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            collocation: seed.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).wrapping_add(2),
        }
    }
}

/// A model and its trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub model: AnyFieldModel,
    pub theta: ParamVector,
    pub report: TrainReport,
    pub collocation: CollocationSet,
}

pub fn build_model(settings: &Settings, problem: &InverseProblem) -> Result<MlpFieldModel> {
    let scaling = InputScaling::from_data(problem.heart_coords(), problem.times());
    MlpFieldModel::with_hidden(&settings.hidden, scaling)
}

/// Trains a fresh network on every sensor of `problem`.
pub fn train_full(settings: &Settings, problem: &InverseProblem, seed: u64) -> Result<Trained> {
    let seeds = StreamSeeds::from_seed(seed);
    let model = build_model(settings, problem)?;
    let theta0 = model.init_params(seeds.init);
    let coll = CollocationSet::sample(
        problem.n_nodes(),
        problem.n_frames(),
        settings.n_collocation.min(problem.n_nodes() * problem.n_frames()),
        seeds.collocation,
    )?;
    let model = AnyFieldModel::Mlp(model);
    let theta0 = if settings.pretrain_iters > 0 {
        // keeps the network away from the pole of the coupling term early on
        let mut warm = settings.clone();
        warm.loss_weights.lambda_p = 0.0;
        warm.train.max_iters = settings.pretrain_iters;
        train_model(&warm, problem, model.clone(), &theta0, coll.clone())?.theta
    } else {
        theta0
    };
    let trained = train_model(settings, problem, model, &theta0, coll)?;
    if !trained.report.converged {
        log::warn!(
            "full training did not reach g_tol: |grad| = {:e} > {:e}",
            trained.report.final_grad_norm,
            trained.report.g_tol
        );
    }
    Ok(trained)
}

/// Trains `model` from `theta0`.
pub fn train_model(
    settings: &Settings,
    problem: &InverseProblem,
    model: AnyFieldModel,
    theta0: &ParamVector,
    collocation: CollocationSet,
) -> Result<Trained> {
    let w = settings.weights_for(problem.sensor_ids())?;
    let obj = Objective::new(&model, problem, &w, settings.loss_weights, &collocation)?;
    let (theta, report) = train(&obj, theta0, &settings.train)?;
    if !report.converged {
        log::info!(
            "training stopped at max_iters with |grad| = {:e} > g_tol = {:e}",
            report.final_grad_norm,
            report.g_tol
        );
    }
    Ok(Trained {
        model,
        theta,
        report,
        collocation,
    })
}

/// Raw importance scores at the trained optimum.
pub fn score(
    settings: &Settings,
    problem: &InverseProblem,
    trained: &Trained,
    reference: Option<ArrayView2<'_, f64>>,
) -> Result<ImportanceScores> {
    let w = settings.weights_for(problem.sensor_ids())?;
    let obj = Objective::new(&trained.model, problem, &w, settings.loss_weights, &trained.collocation)?;
    let mut hvp = settings.hvp;
    if hvp.mode == HvpMode::ExactQuadratic && trained.model.as_linear().is_none() {
        return Err(Error::Unsupported("exact_quadratic Hessian mode needs a linear model".into()));
    }
    if trained.model.as_linear().is_some() && hvp.mode == HvpMode::Assembled {
        hvp.mode = HvpMode::ExactQuadratic;
    }
    let opts = ScoreOptions {
        optimality_tol: settings.require_optimality.then_some(trained.report.g_tol),
        reference,
    };
    importance_scores(&obj, &trained.theta, &hvp, &settings.cg, &opts)
}

/// Confidence and imputation on the body graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub params: ConfidenceParams,
    pub confidence: ConfidenceScores,
    pub imputed: ImputedScores,
}

pub fn refine(settings: &Settings, scores: &ImportanceScores, body_graph: &crate::geometry::WeightedGraph) -> Result<Refined> {
    let params = settings.normalized().confidence;
    let confidence = confidence_scores(scores, &params)?;
    let part = partition(&confidence.c, settings.imputation.tau)?;
    let imputed = impute(body_graph, &scores.s, &part, &settings.imputation)?;
    Ok(Refined {
        params,
        confidence,
        imputed,
    })
}

/// Warm-started retraining on a sensor subset; returns the heart-surface RE.
/// Only the set matters: the sensors are sorted before the subset is formed.
pub fn retrain_error(settings: &Settings, problem: &InverseProblem, trained: &Trained, sensors: &[usize], truth_u: ArrayView2<'_, f64>) -> Result<f64> {
    let mut sorted = sensors.to_vec();
    sorted.sort_unstable();
    let sub = problem.subset(&sorted)?;
    let mut s = settings.clone();
    s.train.max_iters = settings.retrain_iters.unwrap_or(settings.train.max_iters);
    let re_trained = train_model(&s, &sub, trained.model.clone(), &trained.theta, trained.collocation.clone())?;
    reconstruction_error(problem, &re_trained, truth_u)
}

/// RE of the model's `u` on the heart grid against `truth_u` (`N_h x N_t`).
pub fn reconstruction_error(problem: &InverseProblem, trained: &Trained, truth_u: ArrayView2<'_, f64>) -> Result<f64> {
    let outs = trained.model.eval(&trained.theta, problem.grid_queries())?;
    let u_hat = problem.grid_field(&outs.u)?;
    relative_error(u_hat.view(), truth_u)
}

/// Every stage output for one seed up to imputation.
pub struct SeedRun {
    pub dataset: Dataset,
    pub problem: InverseProblem,
    pub trained: Trained,
    pub scores: ImportanceScores,
    pub refined: Refined,
}

/// Synthetic dataset of `seed` (noise drawn from its noise stream).
pub fn seed_dataset(settings: &Settings, seed: u64) -> Result<Dataset> {
    generate(&settings.benchmark, StreamSeeds::from_seed(seed).noise)
}

impl SeedRun {
    pub fn prepare(settings: &Settings, seed: u64) -> Result<Self> {
        settings.validate()?;
        let dataset = seed_dataset(settings, seed)?;
        let problem = dataset.problem()?;
        let trained = train_full(settings, &problem, seed)?;
        let reference = match settings.error_reference {
            ErrorReference::Observed => None,
            ErrorReference::Clean => Some(dataset.clean.view()),
        };
        let scores = score(settings, &problem, &trained, reference)?;
        let refined = refine(settings, &scores, &dataset.body_graph)?;
        Ok(SeedRun {
            dataset,
            problem,
            trained,
            scores,
            refined,
        })
    }

    pub fn select(&self, strategy: Strategy, budget: usize, seed: u64) -> Result<Vec<usize>> {
        let spec = SelectionSpec {
            strategy,
            budget,
            seed,
            start: 0,
        };
        let ctx = SelectionContext {
            body_graph: &self.dataset.body_graph,
            scores: Some(&self.refined.imputed.s_tilde),
        };
        select(&spec, &ctx)
    }

    pub fn evaluate(&self, settings: &Settings, sensors: &[usize]) -> Result<f64> {
        retrain_error(settings, &self.problem, &self.trained, sensors, self.dataset.truth.u.view())
    }
}

/// One (strategy, budget, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub budget: usize,
    pub sigma: f64,
    pub seed: u64,
    pub re: f64,
    pub wall_seconds: f64,
}

fn timed(f: impl FnOnce() -> Result<f64>) -> Result<(f64, f64)> {
    let start = Instant::now();
    let re = f()?;
    Ok((re, start.elapsed().as_secs_f64()))
}

fn with_sigma(settings: &Settings, sigma: f64) -> Settings {
    let mut s = settings.clone();
    s.benchmark.sigma = sigma;
    s
}

/// High, middle and low importance bands of size `k` for every seed.
pub fn run_rank_split(settings: &Settings, sigma: f64, k: usize, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    let settings = with_sigma(settings, sigma);
    let mut out = Vec::new();
    for &seed in seeds {
        let run = SeedRun::prepare(&settings, seed).map_err(|e| seed_error(seed, e))?;
        for band in [Band::High, Band::Middle, Band::Low] {
            let strategy = Strategy::FossaBand(band);
            let sensors = run.select(strategy, k, seed)?;
            let (re, wall) = timed(|| run.evaluate(&settings, &sensors)).map_err(|e| seed_error(seed, e))?;
            log::info!("seed {seed} {strategy} k={k}: RE {re:.6}");
            out.push(RunRecord {
                strategy: strategy.to_string(),
                budget: k,
                sigma,
                seed,
                re,
                wall_seconds: wall,
            });
        }
    }
    Ok(out)
}

/// Full strategy x budget x seed grid with shared data per seed.
pub fn run_budget_sweep(settings: &Settings, sigma: f64, budgets: &[usize], strategies: &[Strategy], seeds: &[u64]) -> Result<Vec<RunRecord>> {
    let settings = with_sigma(settings, sigma);
    let mut out = Vec::new();
    for &seed in seeds {
        let run = SeedRun::prepare(&settings, seed).map_err(|e| seed_error(seed, e))?;
        for &strategy in strategies {
            for &budget in budgets {
                let sensors = run.select(strategy, budget, seed)?;
                let (re, wall) = timed(|| run.evaluate(&settings, &sensors)).map_err(|e| seed_error(seed, e))?;
                log::info!("seed {seed} {strategy} k={budget}: RE {re:.6}");
                out.push(RunRecord {
                    strategy: strategy.to_string(),
                    budget,
                    sigma,
                    seed,
                    re,
                    wall_seconds: wall,
                });
            }
        }
    }
    Ok(out)
}

fn seed_error(seed: u64, e: Error) -> Error {
    log::error!("seed {seed} failed: {e}");
    e
}

/// Mean and sample standard deviation per (strategy, budget, sigma).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub strategy: String,
    pub budget: usize,
    pub sigma: f64,
    pub re: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(records: &[RunRecord]) -> Vec<ExperimentResult> {
    let mut out: Vec<ExperimentResult> = Vec::new();
    for r in records {
        let pos = out
            .iter()
            .position(|e| e.strategy == r.strategy && e.budget == r.budget && e.sigma.to_bits() == r.sigma.to_bits());
        let e = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push(ExperimentResult {
                    strategy: r.strategy.clone(),
                    budget: r.budget,
                    sigma: r.sigma,
                    re: vec![],
                    seeds: vec![],
                    mean: 0.0,
                    std: 0.0,
                });
                out.last_mut().expect("just pushed")
            }
        };
        e.re.push(r.re);
        e.seeds.push(r.seed);
    }
    for e in &mut out {
        let n = e.re.len() as f64;
        e.mean = e.re.iter().sum::<f64>() / n;
        e.std = if e.re.len() > 1 {
            (e.re.iter().map(|x| (x - e.mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
    }
    out
}

/// Budget grid `{32, 64, ..., 352}` rescaled to `n` sensors, deduplicated.
pub fn default_budgets(n: usize) -> Vec<usize> {
    let mut b: Vec<usize> = (1..=11)
        .map(|k| ((32 * k) as f64 * n as f64 / 352.0).round().max(1.0) as usize)
        .collect();
    b.dedup();
    b
}
