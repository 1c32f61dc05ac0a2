//! From-scratch implementations of every algorithm the shipped grammar names.
//!
//! Each algorithm is fitted from a [`StepSpec`] into a [`StepModel`]: a
//! preprocessing model maps feature matrices to feature matrices, a
//! classifier maps them to class ids. Fitted models are immutable and
//! serializable.

mod bayes;
mod knn;
mod linalg;
mod pca;
mod pipeline;
mod rbf;
mod scale;
mod select;
mod tree;

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::StepSpec;
use crate::grammar::{HParamValue, Role};

pub use bayes::{BernoulliNb, GaussianNb};
pub use knn::{Knn, KnnWeights};
pub use linalg::symmetric_eigen;
pub use pca::Pca;
pub use pipeline::{fit_pipeline, fit_pipeline_with, FittedPipeline};
pub use rbf::RbfSampler;
pub use scale::{MinMaxScaler, Norm, Normalizer};
pub use select::{SelectPercentile, VarianceThreshold};
pub use tree::{Criterion, DecisionTree, MaxFeatures, RandomForest, TreeParams};

/// Algorithms with a registered implementation.
pub const CATALOGUE: &[(&str, Role)] = &[
    ("minMaxScaler", Role::Preprocessing),
    ("varianceThreshold", Role::Preprocessing),
    ("normalizer", Role::Preprocessing),
    ("selectPercentile", Role::Preprocessing),
    ("pca", Role::Preprocessing),
    ("rbfSampler", Role::Preprocessing),
    ("kNN", Role::Classifier),
    ("gaussianNB", Role::Classifier),
    ("bernouilliNB", Role::Classifier),
    ("decisionTree", Role::Classifier),
    ("randomForest", Role::Classifier),
];

pub fn role_of(algorithm: &str) -> Option<Role> {
    CATALOGUE.iter().find(|(n, _)| *n == algorithm).map(|(_, r)| *r)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("no implementation registered for algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("{algorithm}.{hparam}: {reason}")]
    BadHParam { algorithm: String, hparam: String, reason: String },
    #[error("empty input")]
    EmptyInput,
    #[error("{0} needs at least {1} samples")]
    TooFewSamples(&'static str, usize),
    #[error("every feature was dropped")]
    AllFeaturesDropped,
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("expected {expected} features, found {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("label count {labels} does not match row count {rows}")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("{0} is not a classifier")]
    NotAClassifier(String),
    #[error("{0} is not a preprocessing step")]
    NotATransformer(String),
}

/// Typed access to a step's bound hyper-parameters with per-algorithm
/// defaults for slots the grammar leaves out.
pub(crate) struct Params<'a> {
    algorithm: &'a str,
    values: &'a IndexMap<String, HParamValue>,
}

impl<'a> Params<'a> {
    pub(crate) fn new(algorithm: &'a str, values: &'a IndexMap<String, HParamValue>) -> Self {
        Params { algorithm, values }
    }

    fn bad(&self, hparam: &str, reason: impl Into<String>) -> StepError {
        StepError::BadHParam { algorithm: self.algorithm.into(), hparam: hparam.into(), reason: reason.into() }
    }

    pub(crate) fn int(&self, name: &str, default: i64) -> Result<i64, StepError> {
        match self.values.get(name) {
            None => Ok(default),
            Some(HParamValue::Int(v)) => Ok(*v),
            Some(other) => Err(self.bad(name, format!("expected an integer, found {other}"))),
        }
    }

    pub(crate) fn real(&self, name: &str, default: f64) -> Result<f64, StepError> {
        match self.values.get(name) {
            None => Ok(default),
            Some(HParamValue::Real(v)) => Ok(*v),
            Some(HParamValue::Int(v)) => Ok(*v as f64),
            Some(other) => Err(self.bad(name, format!("expected a real, found {other}"))),
        }
    }

    pub(crate) fn boolean(&self, name: &str, default: bool) -> Result<bool, StepError> {
        match self.values.get(name) {
            None => Ok(default),
            Some(HParamValue::Bool(v)) => Ok(*v),
            Some(other) => Err(self.bad(name, format!("expected a boolean, found {other}"))),
        }
    }

    pub(crate) fn choice<T: Copy>(&self, name: &str, default: T, options: &[(&str, T)]) -> Result<T, StepError> {
        let key = match self.values.get(name) {
            None => return Ok(default),
            Some(HParamValue::Cat(s)) => s.clone(),
            Some(HParamValue::Int(i)) => i.to_string(),
            Some(HParamValue::Bool(b)) => b.to_string(),
            Some(other) => return Err(self.bad(name, format!("unexpected value {other}"))),
        };
        options
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| self.bad(name, format!("unknown option {key:?}")))
    }

    pub(crate) fn positive(&self, name: &str, default: i64) -> Result<usize, StepError> {
        let v = self.int(name, default)?;
        if v < 1 {
            return Err(self.bad(name, "must be at least 1"));
        }
        Ok(v as usize)
    }
}

/// A fitted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm")]
pub enum StepModel {
    #[serde(rename = "minMaxScaler")]
    MinMaxScaler(MinMaxScaler),
    #[serde(rename = "varianceThreshold")]
    VarianceThreshold(VarianceThreshold),
    #[serde(rename = "normalizer")]
    Normalizer(Normalizer),
    #[serde(rename = "selectPercentile")]
    SelectPercentile(SelectPercentile),
    #[serde(rename = "pca")]
    Pca(Pca),
    #[serde(rename = "rbfSampler")]
    RbfSampler(RbfSampler),
    #[serde(rename = "kNN")]
    Knn(Knn),
    #[serde(rename = "gaussianNB")]
    GaussianNb(GaussianNb),
    #[serde(rename = "bernouilliNB")]
    BernoulliNb(BernoulliNb),
    #[serde(rename = "decisionTree")]
    DecisionTree(DecisionTree),
    #[serde(rename = "randomForest")]
    RandomForest(RandomForest),
}

fn check_fit_input(x: ArrayView2<'_, f64>, y: &[usize]) -> Result<(), StepError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(StepError::EmptyInput);
    }
    if y.len() != x.nrows() {
        return Err(StepError::LabelMismatch { labels: y.len(), rows: x.nrows() });
    }
    Ok(())
}

/// Fits one workflow step. `y` holds class ids in `0..n_classes`; it is
/// ignored by preprocessing steps other than `selectPercentile`.
pub fn fit_step(
    step: &StepSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepModel, StepError> {
    check_fit_input(x, y)?;
    let p = Params::new(&step.algorithm, &step.hparams);
    let model = match step.algorithm.as_str() {
        "minMaxScaler" => StepModel::MinMaxScaler(MinMaxScaler::fit(x)),
        "varianceThreshold" => StepModel::VarianceThreshold(VarianceThreshold::fit(x, p.real("threshold", 0.0)?)?),
        "normalizer" => StepModel::Normalizer(Normalizer::new(
            x.ncols(),
            p.choice("norm", Norm::L2, &[("l1", Norm::L1), ("l2", Norm::L2), ("max", Norm::Max)])?,
        )),
        "selectPercentile" => {
            let pct = p.int("percentile", 10)?;
            if !(1..=100).contains(&pct) {
                return Err(p.bad("percentile", "must lie in 1..=100"));
            }
            StepModel::SelectPercentile(SelectPercentile::fit(x, y, pct as u32))
        }
        "pca" => StepModel::Pca(Pca::fit(x, p.positive("nComponents", 2)?, p.boolean("whiten", false)?)?),
        "rbfSampler" => {
            let gamma = p.real("gamma", 1.0)?;
            if gamma <= 0.0 {
                return Err(p.bad("gamma", "must be positive"));
            }
            StepModel::RbfSampler(RbfSampler::fit(x.ncols(), gamma, p.positive("nComponents", 100)?, rng))
        }
        "kNN" => {
            let weights = p.choice(
                "weights",
                KnnWeights::Uniform,
                &[("uniform", KnnWeights::Uniform), ("distance", KnnWeights::Distance)],
            )?;
            let power = p.int("p", 2)?;
            if power != 1 && power != 2 {
                return Err(p.bad("p", "must be 1 or 2"));
            }
            StepModel::Knn(Knn::fit(x, y, n_classes, p.positive("nNeighbors", 5)?, weights, power as u8))
        }
        "gaussianNB" => {
            let s = p.real("varSmoothing", 1e-9)?;
            if s < 0.0 {
                return Err(p.bad("varSmoothing", "must be non-negative"));
            }
            StepModel::GaussianNb(GaussianNb::fit(x, y, n_classes, s))
        }
        "bernouilliNB" => {
            let alpha = p.real("alpha", 1.0)?;
            if alpha <= 0.0 {
                return Err(p.bad("alpha", "must be positive"));
            }
            StepModel::BernoulliNb(BernoulliNb::fit(x, y, n_classes, alpha, p.boolean("fitPrior", true)?))
        }
        "decisionTree" => StepModel::DecisionTree(DecisionTree::fit(x, y, n_classes, &TreeParams::from_params(&p)?, rng)),
        "randomForest" => StepModel::RandomForest(RandomForest::fit(
            x,
            y,
            n_classes,
            p.positive("nEstimators", 100)?,
            &TreeParams::from_params(&p)?,
            true,
            rng,
        )),
        other => return Err(StepError::UnknownAlgorithm(other.to_string())),
    };
    Ok(model)
}

impl StepModel {
    pub fn algorithm(&self) -> &'static str {
        match self {
            StepModel::MinMaxScaler(_) => "minMaxScaler",
            StepModel::VarianceThreshold(_) => "varianceThreshold",
            StepModel::Normalizer(_) => "normalizer",
            StepModel::SelectPercentile(_) => "selectPercentile",
            StepModel::Pca(_) => "pca",
            StepModel::RbfSampler(_) => "rbfSampler",
            StepModel::Knn(_) => "kNN",
            StepModel::GaussianNb(_) => "gaussianNB",
            StepModel::BernoulliNb(_) => "bernouilliNB",
            StepModel::DecisionTree(_) => "decisionTree",
            StepModel::RandomForest(_) => "randomForest",
        }
    }

    pub fn role(&self) -> Role {
        role_of(self.algorithm()).expect("every model is catalogued")
    }

    /// Number of input features the model was fitted on.
    pub fn n_features(&self) -> usize {
        match self {
            StepModel::MinMaxScaler(m) => m.n_features(),
            StepModel::VarianceThreshold(m) => m.n_features(),
            StepModel::Normalizer(m) => m.n_features(),
            StepModel::SelectPercentile(m) => m.n_features(),
            StepModel::Pca(m) => m.n_features(),
            StepModel::RbfSampler(m) => m.n_features(),
            StepModel::Knn(m) => m.n_features(),
            StepModel::GaussianNb(m) => m.n_features(),
            StepModel::BernoulliNb(m) => m.n_features(),
            StepModel::DecisionTree(m) => m.n_features(),
            StepModel::RandomForest(m) => m.n_features(),
        }
    }

    fn check_width(&self, x: ArrayView2<'_, f64>) -> Result<(), StepError> {
        let expected = self.n_features();
        if x.ncols() != expected {
            return Err(StepError::FeatureMismatch { expected, found: x.ncols() });
        }
        Ok(())
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, StepError> {
        self.check_width(x)?;
        Ok(match self {
            StepModel::MinMaxScaler(m) => m.transform(x),
            StepModel::VarianceThreshold(m) => m.transform(x),
            StepModel::Normalizer(m) => m.transform(x),
            StepModel::SelectPercentile(m) => m.transform(x),
            StepModel::Pca(m) => m.transform(x),
            StepModel::RbfSampler(m) => m.transform(x),
            other => return Err(StepError::NotATransformer(other.algorithm().into())),
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, StepError> {
        self.check_width(x)?;
        Ok(match self {
            StepModel::Knn(m) => m.predict(x),
            StepModel::GaussianNb(m) => m.predict(x),
            StepModel::BernoulliNb(m) => m.predict(x),
            StepModel::DecisionTree(m) => m.predict(x),
            StepModel::RandomForest(m) => m.predict(x),
            other => return Err(StepError::NotAClassifier(other.algorithm().into())),
        })
    }
}

/// Index of the largest score; ties go to the lowest index.
pub(crate) fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
