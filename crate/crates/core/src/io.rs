//! File formats.
//!
//! Every artifact carries a provenance record (crate version, config hash,
//! seed). CSV files put it on a leading `# provenance:` comment line, JSON
//! files under a top-level `provenance` key. Floats are written in shortest
//! round-trip form, so reading a file back reproduces the values bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceScores;
use crate::error::{Error, Result};
use crate::experiment::RunRecord;
use crate::geometry::TransferMatrix;
use crate::importance::{CgReport, ImportanceScores};
use crate::impute::ImputedScores;
use crate::inverse::CollocationSet;
use crate::model::{AnyFieldModel, ParamVector};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config_hash.into(),
            seed,
        }
    }

    fn comment(&self) -> String {
        format!(
            "# provenance: version={} config={} seed={}\n",
            self.version, self.config, self.seed
        )
    }

    fn parse_comment(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# provenance:")?;
        let (mut version, mut config, mut seed) = (None, None, None);
        for field in rest.split_whitespace() {
            let (key, value) = field.split_once('=')?;
            match key {
                "version" => version = Some(value.to_string()),
                "config" => config = Some(value.to_string()),
                "seed" => seed = value.parse().ok(),
                _ => {}
            }
        }
        Some(Provenance {
            version: version?,
            config: config?,
            seed: seed?,
        })
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    parse_err(path, e.to_string())
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Provenance from the leading comment lines of a CSV file, if present.
pub fn csv_provenance(path: &Path) -> Result<Option<Provenance>> {
    let text = read_text(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(Provenance::parse_comment))
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    provenance: Provenance,
    #[serde(flatten)]
    body: T,
}

/// Writes `body` (which must serialize as a JSON object) with a `provenance` key.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> Result<()> {
    let stamped = Stamped {
        provenance: prov.clone(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&stamped)?;
    text.push('\n');
    write_text(path, &text)
}

/// Reads a JSON object; the `provenance` key is optional.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(Option<Provenance>, T)> {
    let text = read_text(path)?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    let prov = match value.as_object_mut().and_then(|m| m.remove("provenance")) {
        Some(p) => Some(serde_json::from_value(p).map_err(|e| parse_err(path, e.to_string()))?),
        None => None,
    };
    let body = serde_json::from_value(value).map_err(|e| parse_err(path, e.to_string()))?;
    Ok((prov, body))
}

fn matrix_body(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for x in row {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{x:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn parse_matrix(path: &Path, text: &str) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(parse_err(path, format!("row {rows} has {} columns", record.len())));
        }
        for field in &record {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, format!("row {rows}: not a number: {field:?}")))?;
            data.push(x);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data).map_err(|e| parse_err(path, e.to_string()))
}

/// Dense matrix, one CSV row per matrix row.
pub fn write_matrix_csv(path: &Path, prov: &Provenance, m: &Array2<f64>) -> Result<()> {
    write_text(path, &(prov.comment() + &matrix_body(m)))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    parse_matrix(path, &read_text(path)?)
}

/// `# rows=N_b cols=N_h` header, then one row per body node.
pub fn write_transfer_csv(path: &Path, prov: &Provenance, r: &TransferMatrix) -> Result<()> {
    let header = format!("# rows={} cols={}\n", r.rows(), r.cols());
    write_text(path, &(header + &prov.comment() + &matrix_body(r.entries())))
}

pub fn read_transfer_csv(path: &Path) -> Result<TransferMatrix> {
    let text = read_text(path)?;
    let header = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# rows="))
        .and_then(|l| l.split_once(" cols="))
        .and_then(|(r, c)| Some((r.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| parse_err(path, "missing `# rows=N cols=M` header"))?;
    let m = parse_matrix(path, &text)?;
    if m.dim() != header {
        return Err(parse_err(
            path,
            format!("header says {}x{}, body is {}x{}", header.0, header.1, m.nrows(), m.ncols()),
        ));
    }
    TransferMatrix::new(m)
}

/// Checkpoint header. Parameters live in a sibling CSV named by `params_file`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: AnyFieldModel,
    pub collocation: CollocationSet,
    pub n_params: usize,
    pub params_file: String,
}

fn params_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.params.csv"))
}

/// Writes `path` (JSON header) and `<stem>.params.csv` (one parameter per line).
pub fn write_checkpoint(
    path: &Path,
    prov: &Provenance,
    model: &AnyFieldModel,
    theta: &ParamVector,
    collocation: &CollocationSet,
) -> Result<()> {
    let params = params_path(path);
    let header = Checkpoint {
        model: model.clone(),
        collocation: collocation.clone(),
        n_params: theta.len(),
        params_file: params.file_name().unwrap().to_string_lossy().into_owned(),
    };
    let column = Array2::from_shape_vec((theta.len(), 1), theta.to_vec())
        .expect("column shape matches length");
    write_matrix_csv(&params, prov, &column)?;
    write_json(path, prov, &header)
}

pub fn read_checkpoint(path: &Path) -> Result<(Checkpoint, ParamVector)> {
    let (_, header): (_, Checkpoint) = read_json(path)?;
    let params = path.with_file_name(&header.params_file);
    let column = read_matrix_csv(&params)?;
    if column.ncols() > 1 || column.nrows() != header.n_params {
        return Err(parse_err(
            &params,
            format!("expected {} parameters in one column", header.n_params),
        ));
    }
    Ok((header, ParamVector::new(column.into_raw_vec_and_offset().0)?))
}

/// One row of `scores.csv`. Confidence and imputation columns stay blank
/// until those stages have run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sensor_id: usize,
    #[serde(rename = "S_raw")]
    pub s_raw: f64,
    pub l_i: f64,
    pub grad_norm: f64,
    pub cg_iters: Option<usize>,
    pub cg_rrel: Option<f64>,
    pub cg_converged: Option<bool>,
    #[serde(rename = "C_S")]
    pub c_s: Option<f64>,
    #[serde(rename = "C_G")]
    pub c_g: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub s: Option<f64>,
    pub z: Option<f64>,
    #[serde(rename = "S_tilde")]
    pub s_tilde: Option<f64>,
    pub trusted: Option<bool>,
}

/// Builds `scores.csv` rows. `sensor_ids` maps local sensor index to body node.
pub fn score_rows(
    sensor_ids: &[usize],
    scores: &ImportanceScores,
    confidence: Option<&ConfidenceScores>,
    imputed: Option<&ImputedScores>,
) -> Vec<ScoreRow> {
    (0..scores.len())
        .map(|i| {
            let report = scores.reports[i].as_ref();
            ScoreRow {
                sensor_id: sensor_ids[i],
                s_raw: scores.s[i],
                l_i: scores.loss[i],
                grad_norm: scores.grad_norm[i],
                cg_iters: report.map(|r| r.iterations),
                cg_rrel: report.map(|r| r.r_rel),
                cg_converged: report.map(|r| r.converged),
                c_s: confidence.map(|c| c.c_s[i]),
                c_g: confidence.map(|c| c.c_g[i]),
                c: confidence.map(|c| c.c[i]),
                s: confidence.map(|c| c.s[i]),
                z: confidence.map(|c| c.z[i]),
                s_tilde: imputed.map(|m| m.s_tilde[i]),
                trusted: imputed.map(|m| m.trusted_mask[i]),
            }
        })
        .collect()
}

/// Rebuilds the stage-one scores from rows. CG solution vectors are not
/// stored, and `error_metric`/`damping` come from the sidecar.
pub fn scores_from_rows(rows: &[ScoreRow], error_metric: f64, damping: f64) -> ImportanceScores {
    ImportanceScores {
        s: rows.iter().map(|r| r.s_raw).collect(),
        loss: rows.iter().map(|r| r.l_i).collect(),
        grad_norm: rows.iter().map(|r| r.grad_norm).collect(),
        reports: rows
            .iter()
            .map(|r| match (r.cg_iters, r.cg_rrel, r.cg_converged) {
                (Some(iterations), Some(r_rel), Some(converged)) => Some(CgReport {
                    iterations,
                    r_rel,
                    converged,
                    negative_curvature: false,
                    solution: Vec::new(),
                }),
                _ => None,
            })
            .collect(),
        error_metric,
        damping,
    }
}

/// Serde records with a header row, after the provenance comment.
pub fn write_csv<T: Serialize>(path: &Path, prov: &Provenance, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(prov.comment().into_bytes());
    for row in rows {
        writer.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = writer.into_inner().map_err(|e| parse_err(path, e.to_string()))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_scores_csv(path: &Path, prov: &Provenance, rows: &[ScoreRow]) -> Result<()> {
    write_csv(path, prov, rows)
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    read_csv(path)
}

/// One row of `results.csv`; `wall_seconds` is blank unless timing was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub budget: usize,
    pub sigma: f64,
    pub seed: u64,
    pub re: f64,
    pub wall_seconds: Option<f64>,
}

impl ResultRow {
    pub fn from_record(r: &RunRecord, timing: bool) -> Self {
        ResultRow {
            strategy: r.strategy.clone(),
            budget: r.budget,
            sigma: r.sigma,
            seed: r.seed,
            re: r.re,
            wall_seconds: timing.then_some(r.wall_seconds),
        }
    }
}

pub fn write_results_csv(path: &Path, prov: &Provenance, rows: &[ResultRow]) -> Result<()> {
    write_csv(path, prov, rows)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sphere_mesh;
    use crate::model::MlpFieldModel;
    use crate::model::{FieldModel, InputScaling};

    fn prov() -> Provenance {
        Provenance::new("abc123", 7)
    }

    #[test]
    fn provenance_comment_round_trip() {
        let p = prov();
        assert_eq!(Provenance::parse_comment(p.comment().trim_end()), Some(p));
        assert_eq!(Provenance::parse_comment("# rows=1 cols=2"), None);
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 + 0.1) / (j as f64 + 3.0) - 1e-300);
        write_matrix_csv(&path, &prov(), &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
        assert_eq!(csv_provenance(&path).unwrap(), Some(prov()));
    }

    #[test]
    fn transfer_header_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let r = TransferMatrix::new(Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 / 7.0)).unwrap();
        write_transfer_csv(&path, &prov(), &r).unwrap();
        let text = read_text(&path).unwrap();
        assert!(text.starts_with("# rows=2 cols=3\n"));
        assert_eq!(read_transfer_csv(&path).unwrap(), r);

        write_text(&path, &text.replace("cols=3", "cols=4")).unwrap();
        assert!(matches!(read_transfer_csv(&path), Err(Error::Parse { .. })));
        write_text(&path, "1,2\n3,4\n").unwrap();
        assert!(read_transfer_csv(&path).is_err());
    }

    #[test]
    fn mesh_json_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.json");
        let mesh = sphere_mesh(12, 1.0).unwrap();
        write_json(&path, &prov(), &mesh).unwrap();
        let (p, back): (_, crate::geometry::SurfaceMesh) = read_json(&path).unwrap();
        assert_eq!(p, Some(prov()));
        assert_eq!(back, mesh);

        write_text(&path, r#"{"nodes": [[0,0,0]], "triangles": [[0,0,1]]}"#).unwrap();
        assert!(read_json::<crate::geometry::SurfaceMesh>(&path).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let scaling = InputScaling {
            lower: [-1.0, -1.0, -1.0, 0.0],
            upper: [1.0, 1.0, 1.0, 30.0],
        };
        let mlp = MlpFieldModel::with_hidden(&[4, 3], scaling).unwrap();
        let theta = mlp.init_params(3);
        let model = AnyFieldModel::Mlp(mlp);
        let colloc = CollocationSet::sample(5, 4, 6, 1).unwrap();
        write_checkpoint(&path, &prov(), &model, &theta, &colloc).unwrap();
        assert!(dir.path().join("model.params.csv").exists());
        let (header, back) = read_checkpoint(&path).unwrap();
        assert_eq!(back, theta);
        assert_eq!(header.model, model);
        assert_eq!(header.collocation, colloc);
        assert_eq!(header.n_params, model.n_params());
    }

    #[test]
    fn scores_round_trip_with_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let scores = ImportanceScores {
            s: vec![0.25, f64::NAN],
            loss: vec![1.5, 2.0],
            grad_norm: vec![0.1, 0.3],
            reports: vec![
                Some(CgReport {
                    iterations: 4,
                    r_rel: 3.0e-4,
                    converged: true,
                    negative_curvature: false,
                    solution: vec![],
                }),
                None,
            ],
            error_metric: 0.5,
            damping: 1e-4,
        };
        let rows = score_rows(&[10, 20], &scores, None, None);
        write_scores_csv(&path, &prov(), &rows).unwrap();
        let text = read_text(&path).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "sensor_id,S_raw,l_i,grad_norm,cg_iters,cg_rrel,cg_converged,C_S,C_G,C,s,z,S_tilde,trusted"
        );
        let back = read_scores_csv(&path).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].s_raw.is_nan() && back[1].cg_iters.is_none());

        let rebuilt = scores_from_rows(&back, 0.5, 1e-4);
        assert_eq!(rebuilt.residuals()[0], 3.0e-4);
        assert_eq!(rebuilt.aborted(), vec![1]);
    }

    #[test]
    fn results_blank_timing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rec = RunRecord {
            strategy: "random".into(),
            budget: 12,
            sigma: 0.01,
            seed: 3,
            re: 0.125,
            wall_seconds: 4.2,
        };
        write_results_csv(&path, &prov(), &[ResultRow::from_record(&rec, false)]).unwrap();
        let text = read_text(&path).unwrap();
        assert!(text.ends_with("random,12,0.01,3,0.125,\n"), "{text}");
        let back = read_results_csv(&path).unwrap();
        assert_eq!(back[0].wall_seconds, None);
        assert_eq!(back[0].re, 0.125);
    }
}
