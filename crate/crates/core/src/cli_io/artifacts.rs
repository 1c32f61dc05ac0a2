use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::CliError;
use crate::archive::Ensemble;
use crate::engine::{EngineConfig, RunReport};

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Everything needed to apply a trained ensemble to new data. Holds no
/// timing information, so equal runs produce equal files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub format_version: u32,
    pub seed: u64,
    pub grammar_sha256: String,
    pub config: EngineConfig,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub ensemble: Ensemble,
}

impl EnsembleFile {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("ensembles serialize");
        write_file(path, json + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })?;
        let version = value.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(ENSEMBLE_FORMAT_VERSION)) {
            return Err(CliError::EnsembleFormat {
                path: path.into(),
                message: format!("unsupported format_version {version:?}, expected {ENSEMBLE_FORMAT_VERSION}"),
            });
        }
        serde_json::from_value(value).map_err(|source| CliError::Json { path: path.into(), source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub n_samples: usize,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestSource {
    File,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub train_samples: usize,
    pub test_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub test_source: TestSource,
}

#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub config: &'a RunConfig,
    pub grammar_sha256: &'a str,
    pub data: DataSummary,
    pub run: &'a RunReport,
    pub ensemble_size: usize,
    pub test: TestMetrics,
}

impl Report<'_> {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("reports serialize");
        write_file(path, json + "\n")
    }
}

/// One row per generation, the initial population as generation 0.
pub fn write_generations_csv(path: &Path, report: &RunReport) -> Result<(), CliError> {
    let csv_err = |source| CliError::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["gen", "best_fit", "mean_fit", "archive_min_divfit"]).map_err(csv_err)?;
    for r in std::iter::once(&report.initial).chain(&report.generations) {
        w.write_record([
            r.gen.to_string(),
            r.best_fit.to_string(),
            r.mean_fit.to_string(),
            r.archive_min_divfit.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.into(), source })
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: PathBuf::from(path), source })
}
