//! The `fossa` command line: dataset generation, training, importance scoring,
//! imputation, selection and evaluation, individually or as one resumable
//! pipeline.
//!
//! Exit codes: `0` success, `2` configuration or input error, `3` numerical
//! failure.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fossa::experiment::{run_budget_sweep, run_rank_split, RunRecord};
use fossa::io::{csv_provenance, read_json, read_results_csv, write_json, Provenance};
use fossa::selection::{SelectionSpec, Strategy};

use crate::commands::*;
use crate::config::{EvalMode, RunConfig};
use crate::data::{load_body_graph, load_dataset, write_dataset};
use crate::error::{CliError, CliResult, StageContext};
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "fossa", version, about = "Sensor importance scoring for physics-informed inverse problems")]
pub struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory of the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seeds with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "FOSSA_THREADS")]
    pub threads: Option<usize>,
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Stage {
    Generate,
    Train,
    Score,
    Impute,
    Select,
    Evaluate,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate ground truth and write a dataset directory.
    Generate,
    /// Train the field model on every sensor of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Importance scores and confidences for a trained model.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Replace low-confidence scores by graph imputation.
    Impute {
        #[arg(long)]
        scores: PathBuf,
        /// Body mesh defining the sensor graph.
        #[arg(long, required_unless_present = "data")]
        mesh: Option<PathBuf>,
        /// Dataset directory, as an alternative to `--mesh`.
        #[arg(long, conflicts_with = "mesh")]
        data: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Choose a sensor subset.
    Select {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, required_unless_present = "data")]
        mesh: Option<PathBuf>,
        #[arg(long, conflicts_with = "mesh")]
        data: Option<PathBuf>,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        budget: usize,
        /// First sensor for maximin.
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Rank-split or budget-sweep experiment over the configured seeds and noise levels.
    Evaluate {
        #[arg(long, value_enum)]
        mode: EvalMode,
    },
    /// generate, train, score, impute, select and evaluate for every seed.
    Pipeline {
        /// Reuse stage outputs whose provenance matches the configuration.
        #[arg(long)]
        resume: bool,
        #[arg(long, value_enum)]
        stop_after: Option<Stage>,
    },
}

/// Parses `args` and runs the command, reporting errors on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already initialized: {e}");
        }
    }
    let cfg = load_config(cli)?;
    let hash = cfg.hash();
    match &cli.command {
        Command::Generate => cmd_generate(cli, &cfg),
        Command::Train { data } => {
            let out = out_or(cli, "model.json");
            if cli.dry_run {
                println!("train: {} -> {}", data.display(), out.display());
                return Ok(());
            }
            let data = load_with_seed(data, cli.seed)?;
            let trained = train(&cfg, &data)?;
            write_trained(&out, &Provenance::new(&hash, data.seed), &trained)?;
            let r = &trained.report;
            println!(
                "trained {} steps: loss {:.6e}, |grad| {:.3e} (g_tol {:.3e}, converged: {})",
                r.iterations, r.final_loss, r.final_grad_norm, r.g_tol, r.converged
            );
            Ok(())
        }
        Command::Score { checkpoint, data } => {
            let out = out_or(cli, "scores.csv");
            if cli.dry_run {
                println!("score: {} + {} -> {}", checkpoint.display(), data.display(), out.display());
                return Ok(());
            }
            let data = load_with_seed(data, cli.seed)?;
            let trained = read_trained(checkpoint)?;
            let (rows, sidecar) = score_stage(&cfg, &data, &trained)?;
            write_scores(&out, &Provenance::new(&hash, data.seed), &rows, &sidecar)?;
            println!("scored {} sensors -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::Impute { scores, mesh, data, tau } => {
            let out = cli.out.clone().unwrap_or_else(|| scores.clone());
            let mut icfg = cfg.imputation;
            if let Some(t) = tau {
                icfg.tau = *t;
            }
            icfg.validate()?;
            if cli.dry_run {
                println!("impute: {} (tau = {}) -> {}", scores.display(), icfg.tau, out.display());
                return Ok(());
            }
            let graph = sensor_graph(mesh.as_deref(), data.as_deref())?;
            let (rows, sidecar) = read_scores(scores)?;
            let (rows, sidecar) = impute_stage(&rows, &sidecar, &graph, &icfg)?;
            let trusted = rows.iter().filter(|r| r.trusted == Some(true)).count();
            write_scores(&out, &provenance_of(scores, &hash), &rows, &sidecar)?;
            println!("{trusted} of {} sensors trusted -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::Select {
            scores,
            mesh,
            data,
            strategy,
            budget,
            start,
        } => {
            let out = out_or(cli, "selection.csv");
            let spec = SelectionSpec {
                strategy: *strategy,
                budget: *budget,
                seed: cli.seed.unwrap_or(0),
                start: *start,
            };
            if cli.dry_run {
                println!("select: {strategy} k={budget} from {} -> {}", scores.display(), out.display());
                return Ok(());
            }
            let graph = sensor_graph(mesh.as_deref(), data.as_deref())?;
            let (rows, _) = read_scores(scores)?;
            let sel = select_stage(&[spec], &rows, &graph)?;
            write_selection(&out, &provenance_of(scores, &hash), &sel)?;
            let ids: Vec<String> = sel.iter().map(|r| r.sensor_id.to_string()).collect();
            println!("{}", ids.join(","));
            Ok(())
        }
        Command::Evaluate { mode } => cmd_evaluate(cli, &cfg, *mode),
        Command::Pipeline { resume, stop_after } => {
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("run"));
            if cli.dry_run {
                print_plan(&cfg, &out, *stop_after);
                return Ok(());
            }
            let records = run_pipeline(&cfg, &out, *resume, *stop_after)?;
            if !records.is_empty() {
                print_summary(&records);
            }
            println!("pipeline complete -> {}", out.display());
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default().materialized(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn load_with_seed(dir: &Path, seed: Option<u64>) -> CliResult<data::LoadedData> {
    let mut data = load_dataset(dir)?;
    if let Some(s) = seed {
        data.seed = s;
    }
    Ok(data)
}

fn sensor_graph(mesh: Option<&Path>, data: Option<&Path>) -> CliResult<fossa::geometry::WeightedGraph> {
    match (mesh, data) {
        (Some(m), _) => load_body_graph(m),
        (None, Some(d)) => Ok(load_dataset(d)?.body_graph),
        (None, None) => Err(CliError::config("need --mesh or --data")),
    }
}

/// Keeps the seed of an existing artifact when deriving a new one from it.
fn provenance_of(path: &Path, hash: &str) -> Provenance {
    let seed = csv_provenance(path).ok().flatten().map_or(0, |p| p.seed);
    Provenance::new(hash, seed)
}

fn cmd_generate(cli: &Cli, cfg: &RunConfig) -> CliResult<()> {
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("data"));
    let dirs: Vec<(u64, PathBuf)> = match cfg.seeds.as_slice() {
        [s] => vec![(*s, out.clone())],
        seeds => seeds.iter().map(|&s| (s, out.join(format!("seed_{s}")))).collect(),
    };
    for (seed, dir) in dirs {
        if cli.dry_run {
            println!("generate: seed {seed} -> {}", dir.display());
            continue;
        }
        write_dataset(&dir, cfg, seed).stage("generate", Some(seed))?;
        println!("seed {seed}: dataset -> {}", dir.display());
    }
    Ok(())
}

fn cmd_evaluate(cli: &Cli, cfg: &RunConfig, mode: EvalMode) -> CliResult<()> {
    if matches!(cfg.benchmark, config::BenchmarkConfig::QuadraticOracle { .. }) {
        return Err(CliError::config("evaluation needs the synthetic benchmark"));
    }
    let out = out_or(cli, "results.csv");
    let settings = cfg.settings();
    if cli.dry_run {
        println!(
            "evaluate {mode:?}: sigmas {:?}, seeds {:?} -> {}",
            cfg.sigmas(),
            cfg.seeds,
            out.display()
        );
        return Ok(());
    }
    let mut records = Vec::new();
    for sigma in cfg.sigmas() {
        let r = match mode {
            EvalMode::RankSplit => run_rank_split(&settings, sigma, cfg.rank_split_budget(), &cfg.seeds),
            EvalMode::Sweep => run_budget_sweep(&settings, sigma, &cfg.budgets(), &cfg.evaluation.strategies, &cfg.seeds),
        };
        records.extend(r.stage("evaluate", None)?);
    }
    let prov = Provenance::new(cfg.hash(), cfg.seeds[0]);
    write_results(&out, &prov, &records, cfg.evaluation.record_timing)?;
    print_summary(&records);
    Ok(())
}

fn print_summary(records: &[RunRecord]) {
    for e in fossa::experiment::summarize(records) {
        println!(
            "{:<13} k={:<4} sigma={:<6} RE {:.4} +- {:.4} (n={})",
            e.strategy,
            e.budget,
            e.sigma,
            e.mean,
            e.std,
            e.re.len()
        );
    }
}

fn print_plan(cfg: &RunConfig, out: &Path, stop_after: Option<Stage>) {
    println!("pipeline plan (config {}) -> {}", cfg.hash(), out.display());
    let last = stop_after.unwrap_or(Stage::Evaluate);
    for &seed in &cfg.seeds {
        let d = format!("seed_{seed}");
        let mut steps = vec![
            (Stage::Generate, format!("{d}/data/")),
            (Stage::Train, format!("{d}/model.json")),
            (Stage::Score, format!("{d}/scores.csv")),
            (Stage::Impute, format!("{d}/scores.csv")),
        ];
        if !cfg.selection.is_empty() {
            steps.push((Stage::Select, format!("{d}/selection.csv")));
        }
        if let Some(mode) = cfg.evaluation.mode {
            steps.push((Stage::Evaluate, format!("{d}/results.csv ({mode:?})")));
        }
        for (stage, target) in steps.into_iter().filter(|(s, _)| *s <= last) {
            println!("  seed {seed}: {stage:?} -> {target}");
        }
    }
    if cfg.evaluation.mode.is_some() && last == Stage::Evaluate {
        println!("  all seeds: results.csv, results.summary.csv");
    }
    println!("  manifest.json");
}

/// True when `path` exists and was written under the configuration `hash`.
fn is_fresh(path: &Path, hash: &str) -> bool {
    if !path.exists() {
        return false;
    }
    let prov = if path.extension().is_some_and(|e| e == "json") {
        read_json::<serde_json::Value>(path).ok().and_then(|(p, _)| p)
    } else {
        csv_provenance(path).ok().flatten()
    };
    prov.is_some_and(|p| p.config == hash)
}

/// Runs every stage for every seed. Each stage reads its inputs back from the
/// files of the previous one, so an interrupted and resumed run follows the
/// same path as an uninterrupted one. Returns the evaluated cells of all seeds.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, resume: bool, stop_after: Option<Stage>) -> CliResult<Vec<RunRecord>> {
    let hash = cfg.hash();
    let last = stop_after.unwrap_or(Stage::Evaluate);
    write_json(&out.join("config.json"), &Provenance::new(&hash, cfg.seeds[0]), &cfg.materialized())?;
    let mut records = Vec::new();
    let mut evaluated = false;
    for &seed in &cfg.seeds {
        let sid = Some(seed);
        let dir = out.join(format!("seed_{seed}"));
        let prov = Provenance::new(&hash, seed);
        let skip = |path: &Path| resume && is_fresh(path, &hash);

        let data_dir = dir.join("data");
        if !skip(&data_dir.join("manifest.json")) {
            write_dataset(&data_dir, cfg, seed).stage("generate", sid)?;
        }
        if last == Stage::Generate {
            continue;
        }
        let data = load_dataset(&data_dir).stage("generate", sid)?;

        let model = dir.join("model.json");
        if !(skip(&model) && skip(&sibling(&model, ".report.json"))) {
            let trained = train(cfg, &data).stage("train", sid)?;
            write_trained(&model, &prov, &trained).stage("train", sid)?;
        }
        let trained = read_trained(&model).stage("train", sid)?;
        if last == Stage::Train {
            continue;
        }

        let scores = dir.join("scores.csv");
        if !skip(&scores) {
            let (rows, sidecar) = score_stage(cfg, &data, &trained).stage("score", sid)?;
            write_scores(&scores, &prov, &rows, &sidecar).stage("score", sid)?;
        }
        let (rows, sidecar) = read_scores(&scores).stage("score", sid)?;
        if last == Stage::Score {
            continue;
        }

        if !(skip(&scores) && rows.iter().all(|r| r.s_tilde.is_some())) {
            let (rows, sidecar) = impute_stage(&rows, &sidecar, &data.body_graph, &cfg.imputation).stage("impute", sid)?;
            write_scores(&scores, &prov, &rows, &sidecar).stage("impute", sid)?;
        }
        let (rows, _) = read_scores(&scores).stage("impute", sid)?;
        if last == Stage::Impute {
            continue;
        }

        if !cfg.selection.is_empty() {
            let path = dir.join("selection.csv");
            if !skip(&path) {
                let sel = select_stage(&cfg.selection, &rows, &data.body_graph).stage("select", sid)?;
                write_selection(&path, &prov, &sel).stage("select", sid)?;
            }
        }
        if last == Stage::Select {
            continue;
        }

        if let Some(mode) = cfg.evaluation.mode {
            let path = dir.join("results.csv");
            if !skip(&path) {
                let rec = evaluate_seed(cfg, mode, &data, &trained, &rows).stage("evaluate", sid)?;
                let timing = cfg.evaluation.record_timing;
                let rows: Vec<_> = rec.iter().map(|r| fossa::io::ResultRow::from_record(r, timing)).collect();
                fossa::io::write_results_csv(&path, &prov, &rows).stage("evaluate", sid)?;
            }
            records.extend(read_results_csv(&path).stage("evaluate", sid)?.into_iter().map(|r| RunRecord {
                strategy: r.strategy,
                budget: r.budget,
                sigma: r.sigma,
                seed: r.seed,
                re: r.re,
                wall_seconds: r.wall_seconds.unwrap_or(0.0),
            }));
            evaluated = true;
        }
    }
    if evaluated {
        let prov = Provenance::new(&hash, cfg.seeds[0]);
        write_results(&out.join("results.csv"), &prov, &records, cfg.evaluation.record_timing)?;
    }
    let manifest = Manifest {
        config_hash: hash.clone(),
        config: cfg.materialized(),
        files: Manifest::scan(out, "manifest.json")?,
    };
    write_json(&out.join("manifest.json"), &Provenance::new(&hash, cfg.seeds[0]), &manifest)?;
    Ok(records)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
struct BookPipeline;
