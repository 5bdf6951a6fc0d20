//! Run manifests and metrics logs.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgvae_core::train::TrainConfig;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub split: u64,
    pub train: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub manifest: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Artifacts {
            manifest: dir.join(MANIFEST_FILE),
            metrics: dir.join(METRICS_FILE),
            checkpoint: dir.join(CHECKPOINT_FILE),
        }
    }
}

/// Everything needed to rerun a training job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_path: PathBuf,
    pub model_digest: String,
    pub data_dir: PathBuf,
    pub labeled: usize,
    pub unlabeled: usize,
    /// Supervision rate `γM / (N + γM)`.
    pub rho: f64,
    pub alpha: f64,
    pub config: TrainConfig,
    pub seeds: Seeds,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub objective: f64,
    pub sup_term: f64,
    pub unsup_term: f64,
    /// Empty on epochs without evaluation.
    pub test_error: Option<f64>,
    pub seconds: f64,
}

/// Appends rows to a CSV file, flushing after each.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(Error::io(path))?;
        Ok(MetricsWriter {
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(Error::io("metrics log"))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}
