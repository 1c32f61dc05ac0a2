//! Dataset ingestion, run configuration, persisted artifacts and the
//! commands behind the `gramflow` binary.

mod artifacts;
mod commands;
mod config;
mod data;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::ArchiveError;
use crate::engine::{EngineError, Mode};
use crate::evaluation::{balanced_accuracy, macro_f1, EvalError};
use crate::grammar::GrammarError;

pub use artifacts::{
    sha256_hex, write_generations_csv, DataSummary, EnsembleFile, Report, TestMetrics, TestSource,
    ENSEMBLE_FORMAT_VERSION,
};
pub use commands::{
    ablate, evaluate, optimize, validate_grammar, AblationReport, AblationRow, DirectionCheck, ModeSummary,
    OptimizeSummary, ABLATION_MARGIN,
};
pub use config::{ConfigError, Overrides, RunConfig, RunConfigFile, DEFAULT_HOLDOUT_FRACTION, DEFAULT_OUTPUT_DIR};
pub use data::{holdout_indices, holdout_split, load_csv, load_csv_with_classes, write_csv, LoadError, SplitError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("grammar {}: {source}", path.as_ref().map_or("(shipped)".to_string(), |p| p.display().to_string()))]
    Grammar { path: Option<PathBuf>, source: GrammarError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    EnsembleFormat { path: PathBuf, message: String },
    #[error("feature columns differ: expected {expected:?}, found {found:?}")]
    FeatureMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("{0}")]
    InvalidArgument(String),
}

impl CliError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Engine(EngineError::InvalidConfig(_)) => "config",
            CliError::Load(_) | CliError::Split(_) | CliError::FeatureMismatch { .. } => "data",
            CliError::Grammar { .. } => "grammar",
            CliError::Engine(_) | CliError::Eval(_) => "run",
            CliError::Archive(_) => "ensemble",
            CliError::Io { .. } | CliError::Csv { .. } => "io",
            CliError::Json { .. } | CliError::EnsembleFormat { .. } => "format",
            CliError::InvalidArgument(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "config" | "grammar" => 3,
            "data" | "format" => 4,
            "run" | "ensemble" => 5,
            _ => 6,
        }
    }

    /// `{"error": kind, "message": text}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BalancedAccuracy,
    MacroF1,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::MacroF1 => "macro_f1",
        }
    }

    pub fn score(self, y_true: &[usize], y_pred: &[usize]) -> Result<f64, EvalError> {
        match self {
            Metric::BalancedAccuracy => balanced_accuracy(y_true, y_pred),
            Metric::MacroF1 => macro_f1(y_true, y_pred),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "balanced_accuracy" => Ok(Metric::BalancedAccuracy),
            "macro_f1" => Ok(Metric::MacroF1),
            _ => Err(format!("unknown metric {s:?}; expected balanced_accuracy or macro_f1")),
        }
    }
}

/// Parses `a..b` (inclusive), a comma-separated list, or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("invalid seed {t:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    let seeds = s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

/// Parses a comma-separated list of modes.
pub fn parse_modes(s: &str) -> Result<Vec<Mode>, String> {
    let modes = s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect::<Result<Vec<Mode>, _>>()?;
    if modes.is_empty() {
        return Err("no modes given".into());
    }
    Ok(modes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds() {
        assert_eq!(parse_seeds("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("4, 9").unwrap(), vec![4, 9]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn modes() {
        assert_eq!(parse_modes("full,basic").unwrap(), vec![Mode::Full, Mode::Basic]);
        assert!(parse_modes("full,best").is_err());
    }

    #[test]
    fn error_json_shape() {
        let e = CliError::InvalidArgument("bad".into());
        assert_eq!(e.to_json(), serde_json::json!({"error": "usage", "message": "bad"}));
        assert_eq!(e.exit_code(), 2);
    }
}
