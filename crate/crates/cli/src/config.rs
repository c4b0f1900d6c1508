//! Run configuration: one JSON document covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fossa::benchmark::SyntheticSpec;
use fossa::confidence::ConfidenceParams;
use fossa::experiment::{default_budgets, ErrorReference, Settings};
use fossa::importance::{CgConfig, HvpConfig};
use fossa::impute::ImputationConfig;
use fossa::inverse::{LossWeights, TrainConfig};
use fossa::selection::{SelectionSpec, Strategy};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkConfig {
    /// Concentric-sphere inverse-ECG benchmark.
    Synthetic(SyntheticSpec),
    /// One-parameter quadratic problem; `values` are the sensor readings at frame 0.
    QuadraticOracle { values: Vec<f64> },
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig::Synthetic(SyntheticSpec::default())
    }
}

impl BenchmarkConfig {
    pub fn n_sensors(&self) -> usize {
        match self {
            BenchmarkConfig::Synthetic(s) => s.body_nodes,
            BenchmarkConfig::QuadraticOracle { values } => values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub n_collocation: usize,
    pub pretrain_iters: usize,
    pub retrain_iters: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = Settings::default();
        ModelConfig {
            hidden: s.hidden,
            n_collocation: s.n_collocation,
            pretrain_iters: s.pretrain_iters,
            retrain_iters: s.retrain_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    RankSplit,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Experiment run by the pipeline's `evaluate` stage; `None` skips it.
    pub mode: Option<EvalMode>,
    /// Noise levels for `fossa evaluate`; empty means the benchmark's own sigma.
    pub sigmas: Vec<f64>,
    /// Band size of the rank split; `None` means 60% of the sensors.
    pub rank_split_budget: Option<usize>,
    /// Sweep budgets; `None` means the default grid scaled to the sensor count.
    pub budgets: Option<Vec<usize>>,
    pub strategies: Vec<Strategy>,
    /// Fill `wall_seconds` in results.csv (breaks byte-identical reruns).
    pub record_timing: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            mode: None,
            sigmas: Vec::new(),
            rank_split_budget: None,
            budgets: None,
            strategies: vec![Strategy::FossaTopk, Strategy::Random, Strategy::Maximin],
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkConfig,
    pub model: ModelConfig,
    pub loss_weights: LossWeights,
    /// Per-sensor loss weights; `None` means all ones.
    pub sensor_weights: Option<Vec<f64>>,
    pub train: TrainConfig,
    pub hvp: HvpConfig,
    pub cg: CgConfig,
    /// `rho_min` and `rho_tol` are taken from `cg`.
    pub confidence: ConfidenceParams,
    pub imputation: ImputationConfig,
    pub require_optimality: bool,
    pub error_reference: ErrorReference,
    /// Selections written by the `select` stage.
    pub selection: Vec<SelectionSpec>,
    pub evaluation: EvaluationConfig,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = Settings::default();
        RunConfig {
            benchmark: BenchmarkConfig::default(),
            model: ModelConfig::default(),
            loss_weights: s.loss_weights,
            sensor_weights: None,
            train: s.train,
            hvp: s.hvp,
            cg: s.cg,
            confidence: s.confidence,
            imputation: s.imputation,
            require_optimality: s.require_optimality,
            error_reference: s.error_reference,
            selection: Vec::new(),
            evaluation: EvaluationConfig::default(),
            seeds: vec![0],
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cfg = cfg.materialized();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy with `confidence.rho_*` synchronized to `cg`.
    pub fn materialized(&self) -> Self {
        let mut c = self.clone();
        c.confidence.rho_min = c.cg.abs_floor;
        c.confidence.rho_tol = c.cg.rel_tol;
        c
    }

    pub fn settings(&self) -> Settings {
        let benchmark = match &self.benchmark {
            BenchmarkConfig::Synthetic(spec) => spec.clone(),
            BenchmarkConfig::QuadraticOracle { .. } => SyntheticSpec::default(),
        };
        Settings {
            benchmark,
            hidden: self.model.hidden.clone(),
            n_collocation: self.model.n_collocation,
            loss_weights: self.loss_weights,
            pretrain_iters: self.model.pretrain_iters,
            train: self.train,
            retrain_iters: self.model.retrain_iters,
            sensor_weights: self.sensor_weights.clone(),
            hvp: self.hvp,
            cg: self.cg,
            confidence: self.confidence,
            imputation: self.imputation,
            require_optimality: self.require_optimality,
            error_reference: self.error_reference,
        }
        .normalized()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.settings().validate()?;
        let n = self.benchmark.n_sensors();
        if let BenchmarkConfig::QuadraticOracle { values } = &self.benchmark {
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(CliError::config("benchmark.values: need at least one finite value"));
            }
            if self.evaluation.mode.is_some() {
                return Err(CliError::config(
                    "evaluation.mode: the quadratic oracle has no ground-truth field to evaluate",
                ));
            }
        }
        if let Some(w) = &self.sensor_weights {
            if w.len() != n {
                return Err(CliError::config(format!(
                    "sensor_weights: expected {n} entries, got {}",
                    w.len()
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds: need at least one seed"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(CliError::config("seeds: duplicates are not allowed"));
        }
        for (i, s) in self.selection.iter().enumerate() {
            if s.budget == 0 || s.budget > n {
                return Err(CliError::config(format!(
                    "selection[{i}].budget: must lie in 1..={n}, got {}",
                    s.budget
                )));
            }
        }
        for b in self.budgets().into_iter().chain(self.evaluation.rank_split_budget) {
            if b == 0 || b > n {
                return Err(CliError::config(format!("evaluation budget {b} outside 1..={n}")));
            }
        }
        if self.evaluation.strategies.is_empty() {
            return Err(CliError::config("evaluation.strategies: need at least one strategy"));
        }
        if let Some(s) = self.sigmas().iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(CliError::config(format!("evaluation.sigmas: invalid noise level {s}")));
        }
        Ok(())
    }

    pub fn rank_split_budget(&self) -> usize {
        self.evaluation
            .rank_split_budget
            .unwrap_or_else(|| ((self.benchmark.n_sensors() as f64) * 0.6).round().max(1.0) as usize)
    }

    /// Sweep budgets.
    pub fn budgets(&self) -> Vec<usize> {
        self.evaluation
            .budgets
            .clone()
            .unwrap_or_else(|| default_budgets(self.benchmark.n_sensors()))
    }

    pub fn sigmas(&self) -> Vec<f64> {
        if !self.evaluation.sigmas.is_empty() {
            return self.evaluation.sigmas.clone();
        }
        match &self.benchmark {
            BenchmarkConfig::Synthetic(s) => vec![s.sigma],
            BenchmarkConfig::QuadraticOracle { .. } => vec![0.0],
        }
    }

    /// Short content hash of the materialized configuration, excluding the
    /// output directory.
    pub fn hash(&self) -> String {
        let mut c = self.materialized();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
