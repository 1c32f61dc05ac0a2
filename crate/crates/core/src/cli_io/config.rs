use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, EngineError, Mode};

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 1.0 / 3.0;
pub const DEFAULT_OUTPUT_DIR: &str = "gramflow-out";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("the config names no training data (key \"train\")")]
    MissingTrain,
    #[error("{field} path {path} does not exist")]
    PathNotFound { field: &'static str, path: PathBuf },
    #[error("holdoutFraction must lie in (0, 0.5], got {0}")]
    HoldoutFraction(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// The JSON run configuration. Every key is optional; search parameters
/// use the same names as [`EngineConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfigFile {
    pub max_gen: Option<usize>,
    pub pop_size: Option<usize>,
    pub cx_prob: Option<f64>,
    pub st_mut_prob: Option<f64>,
    pub max_der: Option<u32>,
    pub arch_size: Option<usize>,
    pub div_weight: Option<f64>,
    pub budget: Option<f64>,
    pub eval_budget: Option<f64>,
    pub k_folds: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub threads: Option<usize>,
    pub grammar: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub label_column: Option<String>,
    pub holdout_fraction: Option<f64>,
}

/// Values given on the command line. They take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub budget: Option<f64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// The effective configuration of a run, echoed into `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    #[serde(flatten)]
    pub engine: EngineConfig,
    /// `None` selects the shipped grammar.
    pub grammar: Option<PathBuf>,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// `None` selects the last column.
    pub label_column: Option<String>,
    pub holdout_fraction: f64,
}

impl RunConfigFile {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut file: RunConfigFile =
            serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.grammar, &mut file.train, &mut file.test, &mut file.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }

    /// Applies `overrides` and the built-in defaults, then validates.
    ///
    /// `evalBudget` defaults to a tenth of the effective budget. An explicit
    /// `evalBudget` larger than the budget is lowered to the budget.
    pub fn resolve(&self, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
        let d = EngineConfig::default();
        let budget = overrides.budget.or(self.budget).unwrap_or(d.budget);
        let eval_budget = match self.eval_budget {
            Some(e) if e > budget => {
                log::warn!("evalBudget {e} exceeds budget {budget}; using {budget}");
                budget
            }
            Some(e) => e,
            None => budget / 10.0,
        };
        let engine = EngineConfig {
            max_gen: self.max_gen.unwrap_or(d.max_gen),
            pop_size: self.pop_size.unwrap_or(d.pop_size),
            cx_prob: self.cx_prob.unwrap_or(d.cx_prob),
            st_mut_prob: self.st_mut_prob.unwrap_or(d.st_mut_prob),
            max_der: self.max_der.unwrap_or(d.max_der),
            arch_size: self.arch_size.unwrap_or(d.arch_size),
            div_weight: self.div_weight.unwrap_or(d.div_weight),
            budget,
            eval_budget,
            k_folds: self.k_folds.unwrap_or(d.k_folds),
            seed: overrides.seed.or(self.seed).unwrap_or(d.seed),
            mode: overrides.mode.or(self.mode).unwrap_or(d.mode),
            threads: overrides.threads.or(self.threads).unwrap_or(d.threads),
        };
        engine.validate()?;

        let holdout_fraction = self.holdout_fraction.unwrap_or(DEFAULT_HOLDOUT_FRACTION);
        if !(holdout_fraction > 0.0 && holdout_fraction <= 0.5) {
            return Err(ConfigError::HoldoutFraction(holdout_fraction));
        }
        let train = self.train.clone().ok_or(ConfigError::MissingTrain)?;
        let must_exist = |field: &'static str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::PathNotFound { field, path: p.into() })
            }
        };
        must_exist("train", &train)?;
        if let Some(t) = &self.test {
            must_exist("test", t)?;
        }
        if let Some(g) = &self.grammar {
            must_exist("grammar", g)?;
        }
        Ok(RunConfig {
            engine,
            grammar: self.grammar.clone(),
            train,
            test: self.test.clone(),
            output_dir: overrides
                .output_dir
                .clone()
                .or_else(|| self.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            label_column: self.label_column.clone(),
            holdout_fraction,
        })
    }
}
