//! Dataset directories written by `generate` and read by every later stage.
//!
//! Layout of a synthetic dataset:
//!
//! | file | content |
//! |---|---|
//! | `heart.json`, `body.json` | surface meshes |
//! | `transfer.csv` | transfer matrix, one row per body node |
//! | `truth_u.csv`, `truth_v.csv` | ground-truth fields, one row per heart node, one column per frame |
//! | `truth.json` | sidecar: frame times, time step, model parameters, stimulus |
//! | `measurements.csv` | noisy body potentials used for training |
//! | `measurements_clean.csv` | noise-free body potentials |
//! | `measurements.json` | sidecar: noise level and noise seed |
//! | `manifest.json` | benchmark parameters, seed and a checksum per file |
//!
//! A quadratic-oracle dataset holds only `measurements.csv` and the manifest.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use fossa::benchmark::{quadratic_oracle, Dataset};
use fossa::experiment::{seed_dataset, StreamSeeds};
use fossa::geometry::{build_edge_graph, SurfaceMesh, WeightedGraph};
use fossa::inverse::{CollocationSet, InverseProblem};
use fossa::io::{read_json, read_matrix_csv, read_transfer_csv, write_json, write_matrix_csv, write_transfer_csv, Provenance};
use fossa::model::LinearFieldModel;
use fossa::simkit::{ApParams, SimConfig};

use crate::config::{BenchmarkConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{FileEntry, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthSidecar {
    times: Vec<f64>,
    dt: f64,
    n_steps: usize,
    record_every: usize,
    stimulus: Vec<usize>,
    ap: ApParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeasurementSidecar {
    sigma: f64,
    noise_seed: u64,
}

/// Body of `manifest.json` in a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub benchmark: BenchmarkConfig,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

/// Everything the later stages need from a dataset directory.
pub struct LoadedData {
    pub seed: u64,
    pub problem: InverseProblem,
    pub body_graph: WeightedGraph,
    pub truth_u: Option<Array2<f64>>,
    pub clean: Option<Array2<f64>>,
    /// Model and collocation point of the quadratic oracle.
    pub oracle: Option<(LinearFieldModel, CollocationSet)>,
}

/// Writes the dataset of `seed` into `dir`.
pub fn write_dataset(dir: &Path, cfg: &RunConfig, seed: u64) -> CliResult<()> {
    let prov = Provenance::new(cfg.hash(), seed);
    let mut files = Vec::new();
    match &cfg.benchmark {
        BenchmarkConfig::Synthetic(spec) => {
            let ds = seed_dataset(&cfg.settings(), seed)?;
            write_synthetic(dir, &prov, &ds, &spec.sim, &mut files)?;
        }
        BenchmarkConfig::QuadraticOracle { .. } => {
            let (_, problem, _) = oracle_parts(&cfg.benchmark)?;
            write_matrix_csv(&dir.join("measurements.csv"), &prov, &problem.measurements().to_owned())?;
            files.push("measurements.csv".to_string());
        }
    }
    let manifest = DataManifest {
        benchmark: cfg.materialized().benchmark,
        seed,
        files: Manifest::checksums(dir, &files)?,
    };
    write_json(&dir.join("manifest.json"), &prov, &manifest)?;
    Ok(())
}

fn write_synthetic(dir: &Path, prov: &Provenance, ds: &Dataset, sim: &SimConfig, files: &mut Vec<String>) -> CliResult<()> {
    write_json(&dir.join("heart.json"), prov, &ds.heart)?;
    write_json(&dir.join("body.json"), prov, &ds.body)?;
    write_transfer_csv(&dir.join("transfer.csv"), prov, &ds.transfer)?;
    write_matrix_csv(&dir.join("truth_u.csv"), prov, &ds.truth.u)?;
    write_matrix_csv(&dir.join("truth_v.csv"), prov, &ds.truth.v)?;
    let truth = TruthSidecar {
        times: ds.truth.times.clone(),
        dt: sim.dt,
        n_steps: sim.n_steps,
        record_every: sim.record_every,
        stimulus: sim.stimulus.nodes.clone(),
        ap: ds.ap,
    };
    write_json(&dir.join("truth.json"), prov, &truth)?;
    write_matrix_csv(&dir.join("measurements.csv"), prov, &ds.noisy)?;
    write_matrix_csv(&dir.join("measurements_clean.csv"), prov, &ds.clean)?;
    let meas = MeasurementSidecar {
        sigma: ds.sigma,
        noise_seed: StreamSeeds::from_seed(prov.seed).noise,
    };
    write_json(&dir.join("measurements.json"), prov, &meas)?;
    files.extend(
        [
            "heart.json",
            "body.json",
            "transfer.csv",
            "truth_u.csv",
            "truth_v.csv",
            "truth.json",
            "measurements.csv",
            "measurements_clean.csv",
            "measurements.json",
        ]
        .map(String::from),
    );
    Ok(())
}

fn oracle_parts(b: &BenchmarkConfig) -> CliResult<(LinearFieldModel, InverseProblem, CollocationSet)> {
    match b {
        BenchmarkConfig::QuadraticOracle { values } => Ok(quadratic_oracle(values)?),
        BenchmarkConfig::Synthetic(_) => Err(CliError::config("not a quadratic oracle benchmark")),
    }
}

/// Reads a dataset directory, verifying the manifest checksums.
pub fn load_dataset(dir: &Path) -> CliResult<LoadedData> {
    let (_, manifest): (_, DataManifest) = read_json(&dir.join("manifest.json"))?;
    Manifest::verify(dir, &manifest.files)?;
    match &manifest.benchmark {
        BenchmarkConfig::Synthetic(_) => {
            let (_, heart): (_, SurfaceMesh) = read_json(&dir.join("heart.json"))?;
            let body_graph = load_body_graph(&dir.join("body.json"))?;
            let (_, truth): (_, TruthSidecar) = read_json(&dir.join("truth.json"))?;
            let problem = InverseProblem::new(
                heart.nodes().to_vec(),
                build_edge_graph(&heart)?,
                read_transfer_csv(&dir.join("transfer.csv"))?,
                truth.times,
                read_matrix_csv(&dir.join("measurements.csv"))?,
                truth.ap,
            )?;
            Ok(LoadedData {
                seed: manifest.seed,
                problem,
                body_graph,
                truth_u: Some(read_matrix_csv(&dir.join("truth_u.csv"))?),
                clean: Some(read_matrix_csv(&dir.join("measurements_clean.csv"))?),
                oracle: None,
            })
        }
        oracle @ BenchmarkConfig::QuadraticOracle { values } => {
            let (model, problem, coll) = oracle_parts(oracle)?;
            let y = read_matrix_csv(&dir.join("measurements.csv"))?;
            let problem = problem.with_measurements(y)?;
            Ok(LoadedData {
                seed: manifest.seed,
                problem,
                // oracle sensors have no geometry; chain them with unit spacing
                body_graph: WeightedGraph::path(values.len(), 1.0)?,
                truth_u: None,
                clean: None,
                oracle: Some((model, coll)),
            })
        }
    }
}

/// Edge graph of a body mesh file.
pub fn load_body_graph(path: &Path) -> CliResult<WeightedGraph> {
    let (_, body): (_, SurfaceMesh) = read_json(path)?;
    Ok(build_edge_graph(&body)?)
}
