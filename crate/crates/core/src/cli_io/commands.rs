use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::artifacts::{write_file, write_generations_csv, DataSummary, EnsembleFile, Report, TestMetrics, TestSource};
use super::config::RunConfig;
use super::data::{holdout_split, load_csv, load_csv_with_classes};
use super::{sha256_hex, CliError, Metric};
use crate::archive::{ensemble_predict, Ensemble};
use crate::engine::{final_ensemble, run_with, EngineConfig, Mode, RunOptions, RunOutcome, Termination};
use crate::evaluation::{balanced_accuracy, macro_f1, stream_rng, Dataset};
use crate::grammar::{parse_grammar, validation_issues, Grammar, Issue, DEFAULT_GRAMMAR};

/// Allowed shortfall in the ablation direction checks.
pub const ABLATION_MARGIN: f64 = 0.02;

struct Prepared {
    grammar_sha256: String,
    grammar: Grammar,
    train: Dataset,
    test: Dataset,
    test_source: TestSource,
}

fn read_grammar(path: Option<&Path>) -> Result<(String, Grammar), CliError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|source| CliError::Io { path: p.into(), source })?,
        None => DEFAULT_GRAMMAR.to_string(),
    };
    let grammar =
        parse_grammar(&text).map_err(|source| CliError::Grammar { path: path.map(PathBuf::from), source })?;
    Ok((sha256_hex(&text), grammar))
}

/// Loads the grammar and data. Without a test file the training data is
/// split with a stream of the run seed.
fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let (grammar_sha256, grammar) = read_grammar(cfg.grammar.as_deref())?;
    let label = cfg.label_column.as_deref();
    let data = load_csv(&cfg.train, label)?;
    let (train, test, test_source) = match &cfg.test {
        Some(path) => {
            let test = load_csv_with_classes(path, label, &data.class_names)?;
            if test.feature_names != data.feature_names {
                return Err(CliError::FeatureMismatch { expected: data.feature_names, found: test.feature_names });
            }
            (data, test, TestSource::File)
        }
        None => {
            let mut rng = stream_rng(cfg.engine.seed, "holdout", 0);
            let (train, test) = holdout_split(&data, cfg.holdout_fraction, &mut rng)?;
            (train, test, TestSource::Holdout)
        }
    };
    Ok(Prepared { grammar_sha256, grammar, train, test, test_source })
}

struct Scored {
    outcome: RunOutcome,
    ensemble: Ensemble,
    test: TestMetrics,
}

fn run_and_score(engine: &EngineConfig, p: &Prepared, opts: RunOptions) -> Result<Scored, CliError> {
    let outcome = run_with(engine, &p.grammar, &p.train, opts)?;
    let ensemble = final_ensemble(engine, &outcome, &p.train)?;
    let pred = ensemble_predict(&ensemble, p.test.features.view())?;
    let test = TestMetrics {
        n_samples: p.test.n_samples(),
        balanced_accuracy: balanced_accuracy(&p.test.labels, &pred)?,
        macro_f1: macro_f1(&p.test.labels, &pred)?,
    };
    Ok(Scored { outcome, ensemble, test })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeSummary {
    pub output_dir: PathBuf,
    pub termination: Termination,
    pub evaluations: usize,
    pub best_ever_fitness: f64,
    pub ensemble_size: usize,
    pub test: TestMetrics,
}

/// Runs the search and writes `report.json`, `ensemble.json` and
/// `generations.csv` into the output directory.
pub fn optimize(cfg: &RunConfig, opts: RunOptions) -> Result<OptimizeSummary, CliError> {
    let p = prepare(cfg)?;
    let s = run_and_score(&cfg.engine, &p, opts)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;

    EnsembleFile {
        format_version: super::ENSEMBLE_FORMAT_VERSION,
        seed: cfg.engine.seed,
        grammar_sha256: p.grammar_sha256.clone(),
        config: cfg.engine.clone(),
        class_names: p.train.class_names.clone(),
        feature_names: p.train.feature_names.clone(),
        ensemble: s.ensemble.clone(),
    }
    .save(&dir.join("ensemble.json"))?;
    write_generations_csv(&dir.join("generations.csv"), &s.outcome.report)?;
    Report {
        config: cfg,
        grammar_sha256: &p.grammar_sha256,
        data: DataSummary {
            train_samples: p.train.n_samples(),
            test_samples: p.test.n_samples(),
            n_features: p.train.n_features(),
            n_classes: p.train.n_classes(),
            test_source: p.test_source,
        },
        run: &s.outcome.report,
        ensemble_size: s.ensemble.members.len(),
        test: s.test,
    }
    .save(&dir.join("report.json"))?;

    Ok(OptimizeSummary {
        output_dir: dir.clone(),
        termination: s.outcome.report.termination,
        evaluations: s.outcome.report.evaluations,
        best_ever_fitness: s.outcome.report.best_ever_fitness,
        ensemble_size: s.ensemble.members.len(),
        test: s.test,
    })
}

/// Scores a saved ensemble on a labelled CSV file.
pub fn evaluate(ensemble: &Path, data: &Path, label_column: Option<&str>, metric: Metric) -> Result<f64, CliError> {
    let file = EnsembleFile::load(ensemble)?;
    let d = load_csv_with_classes(data, label_column, &file.class_names)?;
    if d.feature_names != file.feature_names {
        return Err(CliError::FeatureMismatch { expected: file.feature_names, found: d.feature_names });
    }
    let pred = ensemble_predict(&file.ensemble, d.features.view())?;
    Ok(metric.score(&d.labels, &pred)?)
}

/// Every issue found in a grammar file. Syntax errors are returned as
/// errors since nothing further can be checked.
pub fn validate_grammar(path: &Path) -> Result<Vec<Issue>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    validation_issues(&text).map_err(|source| CliError::Grammar { path: Some(path.into()), source })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub seed: u64,
    pub test_balanced_accuracy: f64,
    pub test_macro_f1: f64,
    pub best_fitness: f64,
    pub ensemble_size: usize,
    pub evaluations: usize,
    pub timeouts: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub runs: usize,
    pub mean_balanced_accuracy: f64,
    pub std_balanced_accuracy: f64,
    pub mean_macro_f1: f64,
}

/// Whether `better` scored at least `worse - margin` on mean balanced
/// accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionCheck {
    pub better: Mode,
    pub worse: Mode,
    pub margin: f64,
    pub better_mean: f64,
    pub worse_mean: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<ModeSummary>,
    pub checks: Vec<DirectionCheck>,
}

impl AblationReport {
    fn from_rows(rows: Vec<AblationRow>, modes: &[Mode]) -> Self {
        let summary: Vec<ModeSummary> = modes
            .iter()
            .map(|&mode| {
                let ba: Vec<f64> = rows.iter().filter(|r| r.mode == mode).map(|r| r.test_balanced_accuracy).collect();
                let f1: Vec<f64> = rows.iter().filter(|r| r.mode == mode).map(|r| r.test_macro_f1).collect();
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
                let m = mean(&ba);
                let var = if ba.len() > 1 {
                    ba.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (ba.len() - 1) as f64
                } else {
                    0.0
                };
                ModeSummary {
                    mode,
                    runs: ba.len(),
                    mean_balanced_accuracy: m,
                    std_balanced_accuracy: var.sqrt(),
                    mean_macro_f1: mean(&f1),
                }
            })
            .collect();
        let mean_of = |m: Mode| summary.iter().find(|s| s.mode == m).map(|s| s.mean_balanced_accuracy);
        let checks = [(Mode::Full, Mode::Basic), (Mode::EnsOnly, Mode::Top10)]
            .into_iter()
            .filter_map(|(better, worse)| {
                let (b, w) = (mean_of(better)?, mean_of(worse)?);
                Some(DirectionCheck {
                    better,
                    worse,
                    margin: ABLATION_MARGIN,
                    better_mean: b,
                    worse_mean: w,
                    holds: b >= w - ABLATION_MARGIN,
                })
            })
            .collect();
        AblationReport { rows, summary, checks }
    }
}

/// Runs every mode under every seed with otherwise identical settings and
/// writes `ablation.csv` and `ablation.json` into the output directory.
/// Runs with the same seed share the train/test split.
pub fn ablate(cfg: &RunConfig, modes: &[Mode], seeds: &[u64]) -> Result<AblationReport, CliError> {
    if modes.is_empty() || seeds.is_empty() {
        return Err(CliError::InvalidArgument("ablate needs at least one mode and one seed".into()));
    }
    let mut rows = Vec::with_capacity(modes.len() * seeds.len());
    for &seed in seeds {
        let seeded = RunConfig { engine: EngineConfig { seed, ..cfg.engine.clone() }, ..cfg.clone() };
        let p = prepare(&seeded)?;
        for &mode in modes {
            let engine = EngineConfig { mode, ..seeded.engine.clone() };
            let s = run_and_score(&engine, &p, RunOptions::default())?;
            log::info!("{mode} seed {seed}: test balanced accuracy {:.4}", s.test.balanced_accuracy);
            rows.push(AblationRow {
                mode,
                seed,
                test_balanced_accuracy: s.test.balanced_accuracy,
                test_macro_f1: s.test.macro_f1,
                best_fitness: s.outcome.report.best_ever_fitness,
                ensemble_size: s.ensemble.members.len(),
                evaluations: s.outcome.report.evaluations,
                timeouts: s.outcome.report.timeouts,
                termination: s.outcome.report.termination,
            });
        }
    }
    let report = AblationReport::from_rows(rows, modes);

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let path = dir.join("ablation.csv");
    let csv_err = |source| CliError::Csv { path: path.clone(), source };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for r in &report.rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.clone(), source })?;
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    write_file(&dir.join("ablation.json"), json + "\n")?;
    Ok(report)
}
