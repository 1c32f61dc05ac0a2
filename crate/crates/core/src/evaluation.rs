//! Fitness evaluation by stratified k-fold cross-validation, and the
//! classification metrics.

use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoding::{StepSpec, WorkflowSpec};
use crate::mlkit::{fit_pipeline, fit_pipeline_with, StepError};
use crate::variation::Individual;

/// Labelled feature matrix. Class ids index `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("{names} feature names for {columns} columns")]
    FeatureNames { names: usize, columns: usize },
    #[error("at least two classes are required, found {0}")]
    TooFewClasses(usize),
    #[error("label {label} has no class name (only {classes} classes)")]
    UnknownLabel { label: usize, classes: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("dataset has no rows")]
    Empty,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if features.nrows() == 0 {
            return Err(DataError::Empty);
        }
        if features.nrows() != labels.len() {
            return Err(DataError::LengthMismatch { rows: features.nrows(), labels: labels.len() });
        }
        if feature_names.len() != features.ncols() {
            return Err(DataError::FeatureNames { names: feature_names.len(), columns: features.ncols() });
        }
        if class_names.len() < 2 {
            return Err(DataError::TooFewClasses(class_names.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(DataError::UnknownLabel { label, classes: class_names.len() });
        }
        if let Some(((row, column), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::NonFinite { row, column });
        }
        Ok(Dataset { features, labels, class_names, feature_names })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows at `idx`, in that order, keeping the full class list.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("k must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("{k} folds requested for {samples} samples")]
    TooManyFolds { k: usize, samples: usize },
    #[error("y_true has {truth} entries, y_pred has {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("metric of an empty prediction")]
    Empty,
}

/// Splits sample indices into `k` folds, class by class. Each class is
/// shuffled and dealt round-robin; dealing continues where the previous
/// class stopped, so fold sizes also differ by at most one. Indices inside a
/// fold are ascending.
pub fn stratified_kfold<R: Rng + ?Sized>(labels: &[usize], k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if k > labels.len() {
        return Err(EvalError::TooManyFolds { k, samples: labels.len() });
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in by_class {
        members.shuffle(rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn check_pair(y_true: &[usize], y_pred: &[usize]) -> Result<usize, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch { truth: y_true.len(), pred: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(y_true.iter().chain(y_pred).copied().max().unwrap_or(0) + 1)
}

/// Mean recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64, EvalError> {
    let k = check_pair(y_true, y_pred)?;
    let mut support = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        if t == p {
            hits[t] += 1;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| support[c] > 0).collect();
    let sum: f64 = present.iter().map(|&c| hits[c] as f64 / support[c] as f64).sum();
    Ok(sum / present.len() as f64)
}

/// Unweighted mean F1 over the classes present in `y_true`; a class with
/// zero precision and recall scores 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64, EvalError> {
    let k = check_pair(y_true, y_pred)?;
    let mut tp = vec![0usize; k];
    let mut support = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| support[c] > 0).collect();
    let sum: f64 = present
        .iter()
        .map(|&c| {
            if tp[c] == 0 {
                return 0.0;
            }
            let precision = tp[c] as f64 / predicted[c] as f64;
            let recall = tp[c] as f64 / support[c] as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .sum();
    Ok(sum / present.len() as f64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random stream for one `(run seed, purpose, id)` triple, so
/// that results do not depend on evaluation order or thread count.
pub fn stream_rng(seed: u64, purpose: &str, id: u64) -> ChaCha8Rng {
    let tag = purpose.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(id);
    rng
}

/// Called before every step fit; lets tests simulate slow algorithms.
pub type StepHook = Arc<dyn Fn(&StepSpec) + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub fitness: f64,
    pub predictions: Vec<usize>,
    pub elapsed: f64,
    pub timed_out: bool,
    /// Why the evaluation scored 0 without timing out, if it did.
    pub failure: Option<String>,
}

#[derive(Debug)]
enum Abort {
    Timeout,
    Step(StepError),
}

impl From<StepError> for Abort {
    fn from(e: StepError) -> Self {
        Abort::Step(e)
    }
}

/// Cross-validates workflows on a fixed training set and fold assignment.
#[derive(Clone)]
pub struct Evaluator<'a> {
    pub train: &'a Dataset,
    pub folds: Vec<Vec<usize>>,
    pub eval_budget: Duration,
    pub hook: Option<StepHook>,
}

impl<'a> Evaluator<'a> {
    pub fn new(train: &'a Dataset, folds: Vec<Vec<usize>>, eval_budget: Duration) -> Self {
        Evaluator { train, folds, eval_budget, hook: None }
    }

    pub fn with_hook(mut self, hook: StepHook) -> Self {
        self.hook = Some(hook);
        self
    }

    /// Out-of-fold predictions and balanced accuracy. Timeouts are checked
    /// before every step fit and after every fold; a timeout or a failing
    /// step scores 0 with an all-zero prediction vector.
    pub fn evaluate(&self, w: &WorkflowSpec, rng: &mut ChaCha8Rng) -> EvalResult {
        let start = Instant::now();
        let n = self.train.n_samples();
        let mut predictions = vec![0usize; n];
        let outcome = self.run_folds(w, rng, start, &mut predictions);
        let elapsed = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => {
                let fitness = balanced_accuracy(&self.train.labels, &predictions).unwrap_or(0.0);
                EvalResult { fitness, predictions, elapsed, timed_out: false, failure: None }
            }
            Err(abort) => {
                let (timed_out, failure) = match abort {
                    Abort::Timeout => (true, None),
                    Abort::Step(e) => (false, Some(e.to_string())),
                };
                if let Some(f) = &failure {
                    log::debug!("{w} failed: {f}");
                } else {
                    log::debug!("{w} timed out after {elapsed:.3}s");
                }
                EvalResult { fitness: 0.0, predictions: vec![0; n], elapsed, timed_out, failure }
            }
        }
    }

    fn run_folds(
        &self,
        w: &WorkflowSpec,
        rng: &mut ChaCha8Rng,
        start: Instant,
        out: &mut [usize],
    ) -> Result<(), Abort> {
        let over = || start.elapsed() > self.eval_budget;
        let n = self.train.n_samples();
        let mut in_fold = vec![false; n];
        for fold in &self.folds {
            in_fold.iter_mut().for_each(|b| *b = false);
            for &i in fold {
                in_fold[i] = true;
            }
            let fit_idx: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let fit = self.train.subset(&fit_idx);
            let held = self.train.features.select(Axis(0), fold);
            let pipeline = fit_pipeline_with(
                w,
                fit.features.view(),
                &fit.labels,
                self.train.n_classes(),
                rng,
                |_, step| {
                    if let Some(h) = &self.hook {
                        h(step);
                    }
                    if over() {
                        return Err(Abort::Timeout);
                    }
                    Ok(())
                },
            )?;
            let pred = pipeline.predict(held.view())?;
            for (&i, p) in fold.iter().zip(pred) {
                out[i] = p;
            }
            if over() {
                return Err(Abort::Timeout);
            }
        }
        Ok(())
    }
}

/// Draws folds from `rng`, then cross-validates the individual's workflow
/// with the same stream.
pub fn evaluate_individual(
    ind: &Individual,
    train: &Dataset,
    k: usize,
    eval_budget: Duration,
    rng: &mut ChaCha8Rng,
) -> Result<EvalResult, EvalError> {
    let folds = stratified_kfold(&train.labels, k, rng)?;
    Ok(Evaluator::new(train, folds, eval_budget).evaluate(ind.phenotype(), rng))
}

/// `1 - balanced accuracy` on `valid` of the workflow fitted on all of
/// `train`.
pub fn loss(w: &WorkflowSpec, train: &Dataset, valid: &Dataset, rng: &mut ChaCha8Rng) -> Result<f64, StepError> {
    let p = fit_pipeline(w, train.features.view(), &train.labels, train.n_classes(), rng)?;
    let pred = p.predict(valid.features.view())?;
    Ok(1.0 - balanced_accuracy(&valid.labels, &pred).expect("validation set is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn metric_examples() {
        assert_eq!(balanced_accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.5);
        let ba = balanced_accuracy(&[0, 1, 2, 0, 1, 2], &[0, 1, 1, 0, 2, 2]).unwrap();
        assert!((ba - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert!((macro_f1(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(balanced_accuracy(&[0], &[0, 1]), Err(EvalError::LengthMismatch { truth: 1, pred: 2 }));
        assert_eq!(macro_f1(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn absent_classes_are_excluded() {
        // Class 2 only ever predicted: it does not enter the average.
        assert_eq!(balanced_accuracy(&[0, 1], &[0, 2]).unwrap(), 0.5);
    }

    #[test]
    fn balanced_folds_get_one_sample_per_class() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let folds = stratified_kfold(&labels, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for f in &folds {
            assert_eq!(f.len(), 2);
            assert_eq!(f.iter().map(|&i| labels[i]).sum::<usize>(), 1);
        }
    }

    #[test]
    fn fold_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(stratified_kfold(&[0, 1], 1, &mut rng), Err(EvalError::TooFewFolds(1)));
        assert_eq!(stratified_kfold(&[0, 1], 3, &mut rng), Err(EvalError::TooManyFolds { k: 3, samples: 2 }));
    }

    #[test]
    fn dataset_invariants() {
        let x = Array2::<f64>::zeros((2, 1));
        let names = vec!["a".to_string(), "b".to_string()];
        let f = vec!["f".to_string()];
        assert!(Dataset::new(x.clone(), vec![0, 1], names.clone(), f.clone()).is_ok());
        assert_eq!(
            Dataset::new(x.clone(), vec![0, 1], vec!["a".into()], f.clone()),
            Err(DataError::TooFewClasses(1))
        );
        let mut bad = x.clone();
        bad[[1, 0]] = f64::NAN;
        assert_eq!(Dataset::new(bad, vec![0, 1], names, f), Err(DataError::NonFinite { row: 1, column: 0 }));
    }
}
