//! On-disk layout of a run.
//!
//! ```text
//! <out>/manifest.json
//! <out>/observations.json
//! <out>/truth.json            (synthetic runs only)
//! <out>/iter_00/params.csv    n rows x J columns
//! <out>/iter_00/preds.csv     q rows x J columns, NaN in failed columns
//! <out>/iter_00/status.csv    one row per particle
//! ```
//!
//! Numbers are written as shortest round-trip decimals so loading
//! reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::driver::{IterationRecord, MisfitSummary, RunResult, RunStatus, Snapshot};
use crate::ensemble::{
    EkiSchedule, FailureReason, NoiseCovariance, ObservationModel, ParameterEnsemble, ParticleStatus,
    PredictionEnsemble,
};
use crate::error::{EkiError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const OBSERVATIONS_FILE: &str = "observations.json";
pub const TRUTH_FILE: &str = "truth.json";

/// Provenance of one inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub seed: u64,
    /// The configuration the run was started with.
    pub config: serde_json::Value,
    pub parameter_dim: usize,
    pub observation_dim: usize,
    pub ensemble_size: usize,
    pub status: RunStatus,
    pub schedule: EkiSchedule,
    pub iterations: Vec<IterationRecord>,
    pub final_misfit: Option<MisfitSummary>,
    /// Names of the snapshot directories in temporal order.
    pub snapshots: Vec<String>,
}

impl RunManifest {
    pub fn new(result: &RunResult, seed: u64, config: serde_json::Value, observation_dim: usize) -> Self {
        let first = &result.snapshots[0].params;
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            parameter_dim: first.dim(),
            observation_dim,
            ensemble_size: first.size(),
            status: result.status.clone(),
            schedule: result.schedule.clone(),
            iterations: result.iterations.clone(),
            final_misfit: result.final_misfit,
            snapshots: snapshot_names(result.snapshots.len()),
        }
    }
}

/// Observation vector and noise covariance as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFile {
    pub y: Vec<f64>,
    pub covariance: NoiseCovariance,
}

impl ObservationFile {
    pub fn from_model(obs: &ObservationModel) -> Self {
        Self {
            y: obs.y().iter().copied().collect(),
            covariance: obs.covariance_spec().clone(),
        }
    }

    pub fn to_model(&self) -> Result<ObservationModel> {
        ObservationModel::from_parts(self.y.clone(), self.covariance.clone())
    }
}

/// `iter_00`, `iter_01`, ... padded so that names sort in temporal order.
pub fn snapshot_names(count: usize) -> Vec<String> {
    let width = count.saturating_sub(1).to_string().len().max(2);
    (0..count).map(|i| format!("iter_{i:0width$}")).collect()
}

fn fmt_f64(v: f64) -> String {
    // Debug gives the shortest string that parses back to the same value
    format!("{v:?}")
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| EkiError::io(path, e.into()))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(|e| EkiError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| EkiError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| EkiError::io(path, e.into()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| EkiError::schema(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| EkiError::schema(path, format!("row {}: bad number {s:?}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(EkiError::schema(
                    path,
                    format!("row {} has {} columns", i + 1, row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn write_status(path: &Path, status: &[ParticleStatus]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EkiError::io(path, e.into()))?;
    let io = |e: csv::Error| EkiError::io(path, e.into());
    w.write_record(["particle", "status"]).map_err(io)?;
    for (j, s) in status.iter().enumerate() {
        let tag = match s {
            ParticleStatus::Success => "success",
            ParticleStatus::Failed(r) => r.as_str(),
        };
        w.write_record([j.to_string().as_str(), tag]).map_err(io)?;
    }
    w.flush().map_err(|e| EkiError::io(path, e))
}

fn read_status(path: &Path) -> Result<Vec<ParticleStatus>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| EkiError::io(path, e.into()))?;
    let mut out = Vec::new();
    for (j, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| EkiError::schema(path, e.to_string()))?;
        if rec.get(0) != Some(j.to_string().as_str()) {
            return Err(EkiError::schema(
                path,
                format!("row {} is not particle {j}", j + 1),
            ));
        }
        let tag = rec.get(1).unwrap_or("");
        out.push(match tag {
            "success" => ParticleStatus::Success,
            other => ParticleStatus::Failed(
                FailureReason::parse(other)
                    .ok_or_else(|| EkiError::schema(path, format!("unknown status {other:?}")))?,
            ),
        });
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| EkiError::schema(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| EkiError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| EkiError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| EkiError::schema(path, e.to_string()))
}

/// Writes one snapshot directory.
pub fn persist_iteration(dir: &Path, name: &str, snapshot: &Snapshot) -> Result<PathBuf> {
    let sub = dir.join(name);
    fs::create_dir_all(&sub).map_err(|e| EkiError::io(&sub, e))?;
    write_matrix(&sub.join("params.csv"), &snapshot.params.values)?;
    if let Some(p) = &snapshot.preds {
        write_matrix(&sub.join("preds.csv"), &p.values)?;
        write_status(&sub.join("status.csv"), &p.status)?;
    }
    Ok(sub)
}

/// Writes the full run tree.
pub fn persist_run(
    dir: &Path,
    result: &RunResult,
    manifest: &RunManifest,
    obs: &ObservationModel,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| EkiError::io(dir, e))?;
    for (snap, name) in result.snapshots.iter().zip(&manifest.snapshots) {
        persist_iteration(dir, name, snap)?;
    }
    write_json(&dir.join(OBSERVATIONS_FILE), &ObservationFile::from_model(obs))?;
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

/// A run read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub result: RunResult,
    pub observations: ObservationModel,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let observations = read_json::<ObservationFile>(&dir.join(OBSERVATIONS_FILE))?.to_model()?;
    if manifest.snapshots.is_empty() {
        return Err(EkiError::schema(dir.join(MANIFEST_FILE), "no snapshots listed"));
    }
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    for (i, name) in manifest.snapshots.iter().enumerate() {
        let sub = dir.join(name);
        if !sub.is_dir() {
            return Err(EkiError::schema(&sub, "missing iteration directory"));
        }
        let values = read_matrix(&sub.join("params.csv"))?;
        if values.shape() != (manifest.parameter_dim, manifest.ensemble_size) {
            return Err(EkiError::schema(
                sub.join("params.csv"),
                format!(
                    "shape {:?}, manifest says {:?}",
                    values.shape(),
                    (manifest.parameter_dim, manifest.ensemble_size)
                ),
            ));
        }
        let params = ParameterEnsemble::new(values, i)?;
        let preds_path = sub.join("preds.csv");
        let preds = if preds_path.exists() {
            let values = read_matrix(&preds_path)?;
            if values.shape() != (manifest.observation_dim, manifest.ensemble_size) {
                return Err(EkiError::schema(&preds_path, "shape disagrees with manifest"));
            }
            Some(PredictionEnsemble::new(
                values,
                read_status(&sub.join("status.csv"))?,
            )?)
        } else {
            None
        };
        snapshots.push(Snapshot { params, preds });
    }
    Ok(LoadedRun {
        result: RunResult {
            snapshots,
            schedule: manifest.schedule.clone(),
            iterations: manifest.iterations.clone(),
            status: manifest.status.clone(),
            final_misfit: manifest.final_misfit,
        },
        manifest,
        observations,
    })
}
