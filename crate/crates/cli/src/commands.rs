//! Stage implementations shared by the subcommands and the pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fossa::confidence::{confidence_scores, ConfidenceParams};
use fossa::experiment::{retrain_error, score, summarize, train_full, train_model, RunRecord, Trained};
use fossa::geometry::WeightedGraph;
use fossa::importance::{CgConfig, HvpConfig};
use fossa::impute::{impute, partition, ImputationConfig};
use fossa::inverse::TrainReport;
use fossa::io::{
    read_checkpoint, read_csv, read_json, read_scores_csv, score_rows, scores_from_rows, write_checkpoint, write_csv,
    write_json, write_results_csv, write_scores_csv, Provenance, ResultRow, ScoreRow,
};
use fossa::model::{AnyFieldModel, FieldModel, ParamVector};
use fossa::selection::{select, Band, SelectionContext, SelectionSpec, Strategy};

use crate::config::{EvalMode, RunConfig};
use crate::data::LoadedData;
use crate::error::{CliError, CliResult};

/// `<dir>/<stem>.<ext>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn train(cfg: &RunConfig, data: &LoadedData) -> CliResult<Trained> {
    let settings = cfg.settings();
    let trained = match &data.oracle {
        Some((model, coll)) => {
            let model = AnyFieldModel::Linear(model.clone());
            let theta0 = ParamVector::zeros(model.n_params());
            train_model(&settings, &data.problem, model, &theta0, coll.clone())?
        }
        None => train_full(&settings, &data.problem, data.seed)?,
    };
    Ok(trained)
}

/// Writes the checkpoint pair and `<stem>.report.json`.
pub fn write_trained(path: &Path, prov: &Provenance, t: &Trained) -> CliResult<()> {
    write_checkpoint(path, prov, &t.model, &t.theta, &t.collocation)?;
    write_json(&sibling(path, ".report.json"), prov, &t.report)?;
    Ok(())
}

pub fn read_trained(path: &Path) -> CliResult<Trained> {
    let (header, theta) = read_checkpoint(path)?;
    let (_, report): (_, TrainReport) = read_json(&sibling(path, ".report.json"))?;
    Ok(Trained {
        model: header.model,
        theta,
        report,
        collocation: header.collocation,
    })
}

/// Parameters echoed next to `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresSidecar {
    pub error_metric: f64,
    pub damping: f64,
    pub hvp: HvpConfig,
    pub cg: CgConfig,
    pub confidence: ConfidenceParams,
    pub imputation: Option<ImputationConfig>,
}

/// Stage one plus the confidence columns.
pub fn score_stage(cfg: &RunConfig, data: &LoadedData, trained: &Trained) -> CliResult<(Vec<ScoreRow>, ScoresSidecar)> {
    let settings = cfg.settings();
    let reference = match settings.error_reference {
        fossa::experiment::ErrorReference::Observed => None,
        fossa::experiment::ErrorReference::Clean => Some(
            data.clean
                .as_ref()
                .ok_or_else(|| CliError::config("error_reference = clean needs noise-free measurements"))?
                .view(),
        ),
    };
    let scores = score(&settings, &data.problem, trained, reference)?;
    let conf = confidence_scores(&scores, &settings.confidence)?;
    let rows = score_rows(data.problem.sensor_ids(), &scores, Some(&conf), None);
    let sidecar = ScoresSidecar {
        error_metric: scores.error_metric,
        damping: scores.damping,
        hvp: settings.hvp,
        cg: settings.cg,
        confidence: settings.confidence,
        imputation: None,
    };
    Ok((rows, sidecar))
}

pub fn write_scores(path: &Path, prov: &Provenance, rows: &[ScoreRow], sidecar: &ScoresSidecar) -> CliResult<()> {
    write_scores_csv(path, prov, rows)?;
    write_json(&sibling(path, ".json"), prov, sidecar)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> CliResult<(Vec<ScoreRow>, ScoresSidecar)> {
    let rows = read_scores_csv(path)?;
    let (_, sidecar) = read_json(&sibling(path, ".json"))?;
    Ok((rows, sidecar))
}

/// Fills `S_tilde` and `trusted` from the confidence column `C`. Rows missing
/// `C` get it recomputed from the stage-one columns.
pub fn impute_stage(
    rows: &[ScoreRow],
    sidecar: &ScoresSidecar,
    graph: &WeightedGraph,
    cfg: &ImputationConfig,
) -> CliResult<(Vec<ScoreRow>, ScoresSidecar)> {
    if graph.node_count() != rows.len() {
        return Err(CliError::config(format!(
            "graph has {} nodes but the scores list {} sensors",
            graph.node_count(),
            rows.len()
        )));
    }
    let stage1 = scores_from_rows(rows, sidecar.error_metric, sidecar.damping);
    let conf = match rows.iter().map(|r| r.c).collect::<Option<Vec<f64>>>() {
        Some(_) => None,
        None => Some(confidence_scores(&stage1, &sidecar.confidence)?),
    };
    let c: Vec<f64> = match &conf {
        Some(conf) => conf.c.clone(),
        None => rows.iter().map(|r| r.c.expect("checked above")).collect(),
    };
    let part = partition(&c, cfg.tau)?;
    let imputed = impute(graph, &stage1.s, &part, cfg)?;
    if !imputed.converged {
        log::warn!("imputation stopped at max_iters without reaching delta");
    }
    let mut out = rows.to_vec();
    for (i, r) in out.iter_mut().enumerate() {
        if let Some(conf) = &conf {
            r.c_s = Some(conf.c_s[i]);
            r.c_g = Some(conf.c_g[i]);
            r.c = Some(conf.c[i]);
            r.s = Some(conf.s[i]);
            r.z = Some(conf.z[i]);
        }
        r.s_tilde = Some(imputed.s_tilde[i]);
        r.trusted = Some(imputed.trusted_mask[i]);
    }
    let mut sidecar = sidecar.clone();
    sidecar.imputation = Some(*cfg);
    Ok((out, sidecar))
}

fn refined_scores(rows: &[ScoreRow]) -> CliResult<Vec<f64>> {
    rows.iter()
        .map(|r| r.s_tilde)
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::config("scores have no S_tilde column; run `fossa impute` first"))
}

/// One selected sensor of `selection.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub strategy: String,
    pub budget: usize,
    pub seed: u64,
    /// Position in the strategy's output (pick order for maximin).
    pub rank: usize,
    pub sensor_id: usize,
}

pub fn select_stage(specs: &[SelectionSpec], rows: &[ScoreRow], graph: &WeightedGraph) -> CliResult<Vec<SelectionRow>> {
    let needs_scores = specs.iter().any(|s| matches!(s.strategy, Strategy::FossaTopk | Strategy::FossaBand(_)));
    let s_tilde = if needs_scores { Some(refined_scores(rows)?) } else { None };
    let ctx = SelectionContext {
        body_graph: graph,
        scores: s_tilde.as_deref(),
    };
    let mut out = Vec::new();
    for spec in specs {
        for (rank, i) in select(spec, &ctx)?.into_iter().enumerate() {
            out.push(SelectionRow {
                strategy: spec.strategy.to_string(),
                budget: spec.budget,
                seed: spec.seed,
                rank,
                sensor_id: rows[i].sensor_id,
            });
        }
    }
    Ok(out)
}

pub fn write_selection(path: &Path, prov: &Provenance, rows: &[SelectionRow]) -> CliResult<()> {
    Ok(write_csv(path, prov, rows)?)
}

pub fn read_selection(path: &Path) -> CliResult<Vec<SelectionRow>> {
    Ok(read_csv(path)?)
}

/// Rank-split or budget-sweep cells for one seed, from stored artifacts.
pub fn evaluate_seed(
    cfg: &RunConfig,
    mode: EvalMode,
    data: &LoadedData,
    trained: &Trained,
    rows: &[ScoreRow],
) -> CliResult<Vec<RunRecord>> {
    let truth = data
        .truth_u
        .as_ref()
        .ok_or_else(|| CliError::config("evaluation needs a ground-truth field"))?;
    let settings = cfg.settings();
    let s_tilde = refined_scores(rows)?;
    let ctx = SelectionContext {
        body_graph: &data.body_graph,
        scores: Some(&s_tilde),
    };
    let cells: Vec<(Strategy, usize)> = match mode {
        EvalMode::RankSplit => {
            let k = cfg.rank_split_budget();
            [Band::High, Band::Middle, Band::Low].map(|b| (Strategy::FossaBand(b), k)).to_vec()
        }
        EvalMode::Sweep => cfg
            .evaluation
            .strategies
            .iter()
            .flat_map(|&s| cfg.budgets().into_iter().map(move |b| (s, b)))
            .collect(),
    };
    let sigma = settings.benchmark.sigma;
    let mut out = Vec::new();
    for (strategy, budget) in cells {
        let spec = SelectionSpec {
            strategy,
            budget,
            seed: data.seed,
            start: 0,
        };
        let sensors = select(&spec, &ctx)?;
        let start = std::time::Instant::now();
        let re = retrain_error(&settings, &data.problem, trained, &sensors, truth.view())?;
        log::info!("seed {} {strategy} k={budget}: RE {re:.6}", data.seed);
        out.push(RunRecord {
            strategy: strategy.to_string(),
            budget,
            sigma,
            seed: data.seed,
            re,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub budget: usize,
    pub sigma: f64,
    pub n_seeds: usize,
    pub mean_re: f64,
    pub std_re: f64,
}

pub fn write_results(path: &Path, prov: &Provenance, records: &[RunRecord], timing: bool) -> CliResult<()> {
    let rows: Vec<ResultRow> = records.iter().map(|r| ResultRow::from_record(r, timing)).collect();
    write_results_csv(path, prov, &rows)?;
    let summary: Vec<SummaryRow> = summarize(records)
        .into_iter()
        .map(|e| SummaryRow {
            strategy: e.strategy,
            budget: e.budget,
            sigma: e.sigma,
            n_seeds: e.re.len(),
            mean_re: e.mean,
            std_re: e.std,
        })
        .collect();
    write_csv(&sibling(path, ".summary.csv"), prov, &summary)?;
    Ok(())
}
