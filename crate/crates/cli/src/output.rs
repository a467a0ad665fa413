use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use posegnn::model::Metrics;
use posegnn::{LossReport, TrainConfig};

use crate::CliResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub total: f64,
    pub position: f64,
    pub orientation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub k: usize,
    pub conv: String,
    pub mode: String,
    pub alpha: f64,
    pub med_pos_m: f64,
    pub med_ori_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestMetrics {
    pub med_pos_m: f64,
    pub med_ori_deg: f64,
}

impl From<Metrics> for TestMetrics {
    fn from(m: Metrics) -> Self {
        Self {
            med_pos_m: m.median_position_m,
            med_ori_deg: m.median_orientation_deg,
        }
    }
}

/// One line of the run manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// `ok` or `diverged`.
    pub status: String,
    pub config: TrainConfig,
    pub dataset: DatasetRef,
    pub checkpoint: Option<String>,
    pub loss_csv: Option<String>,
    pub final_loss: Option<LossReport>,
    pub test: Option<TestMetrics>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn append_manifest(path: &Path, m: &Manifest) -> CliResult<()> {
    let line = serde_json::to_string(m).map_err(|e| crate::CliError::Output(e.to_string()))?;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

pub fn loss_rows(history: &[LossReport]) -> Vec<LossRow> {
    history
        .iter()
        .enumerate()
        .map(|(epoch, r)| LossRow {
            epoch,
            total: r.total,
            position: r.position_term,
            orientation: r.orientation_term,
        })
        .collect()
}
