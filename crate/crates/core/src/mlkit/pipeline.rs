use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_step, StepError, StepModel};
use crate::encoding::{StepSpec, WorkflowSpec};
use crate::grammar::Role;

pub const STEP_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VersionedStep {
    schema_version: u32,
    #[serde(flatten)]
    model: StepModel,
}

#[derive(Serialize, Deserialize)]
struct PipelineRepr {
    steps: Vec<VersionedStep>,
}

/// A workflow whose steps have all been fitted, classifier last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PipelineRepr", try_from = "PipelineRepr")]
pub struct FittedPipeline {
    steps: Vec<StepModel>,
}

impl From<FittedPipeline> for PipelineRepr {
    fn from(p: FittedPipeline) -> Self {
        PipelineRepr {
            steps: p
                .steps
                .into_iter()
                .map(|model| VersionedStep { schema_version: STEP_SCHEMA_VERSION, model })
                .collect(),
        }
    }
}

impl TryFrom<PipelineRepr> for FittedPipeline {
    type Error = String;

    fn try_from(r: PipelineRepr) -> Result<Self, String> {
        let mut steps = Vec::with_capacity(r.steps.len());
        for s in r.steps {
            if s.schema_version != STEP_SCHEMA_VERSION {
                return Err(format!(
                    "unsupported schema_version {} for {}",
                    s.schema_version,
                    s.model.algorithm()
                ));
            }
            steps.push(s.model);
        }
        FittedPipeline::new(steps)
    }
}

impl FittedPipeline {
    fn new(steps: Vec<StepModel>) -> Result<Self, String> {
        match steps.split_last() {
            None => Err("a pipeline needs at least one step".into()),
            Some((last, rest)) => {
                if last.role() != Role::Classifier || rest.iter().any(|s| s.role() != Role::Preprocessing) {
                    return Err("a pipeline must be preprocessing steps followed by one classifier".into());
                }
                Ok(FittedPipeline { steps })
            }
        }
    }

    pub fn steps(&self) -> &[StepModel] {
        &self.steps
    }

    pub fn n_features(&self) -> usize {
        self.steps[0].n_features()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, StepError> {
        let (classifier, prep) = self.steps.split_last().expect("validated on construction");
        let mut current: Option<Array2<f64>> = None;
        for step in prep {
            let next = match &current {
                None => step.transform(x)?,
                Some(m) => step.transform(m.view())?,
            };
            current = Some(next);
        }
        match &current {
            None => classifier.predict(x),
            Some(m) => classifier.predict(m.view()),
        }
    }
}

pub fn fit_pipeline(
    spec: &WorkflowSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FittedPipeline, StepError> {
    fit_pipeline_with(spec, x, y, n_classes, rng, |_, _| Ok::<(), StepError>(()))
}

/// Fits the steps in order, calling `before_step` ahead of each one. An
/// error from the hook aborts the fit.
pub fn fit_pipeline_with<E, F>(
    spec: &WorkflowSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    rng: &mut ChaCha8Rng,
    mut before_step: F,
) -> Result<FittedPipeline, E>
where
    E: From<StepError>,
    F: FnMut(usize, &StepSpec) -> Result<(), E>,
{
    let mut models = Vec::with_capacity(spec.steps.len());
    let mut current: Option<Array2<f64>> = None;
    for (i, step) in spec.steps.iter().enumerate() {
        before_step(i, step)?;
        let input = match &current {
            Some(m) => m.view(),
            None => x.view(),
        };
        let model = fit_step(step, input, y, n_classes, rng)?;
        if step.role == Role::Preprocessing {
            let out = model.transform(input)?;
            if out.ncols() == 0 {
                return Err(StepError::AllFeaturesDropped.into());
            }
            current = Some(out);
        }
        models.push(model);
    }
    FittedPipeline::new(models).map_err(|_| {
        E::from(StepError::NotAClassifier(spec.steps.last().map(|s| s.algorithm.clone()).unwrap_or_default()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::HParamValue;
    use indexmap::IndexMap;
    use ndarray::array;
    use rand::SeedableRng;

    fn step(alg: &str, role: Role) -> StepSpec {
        StepSpec { algorithm: alg.into(), role, hparams: IndexMap::new() }
    }

    #[test]
    fn fit_predict_and_json_round_trip() {
        let x = array![[0.0, 10.0], [1.0, 11.0], [5.0, 0.0], [6.0, 1.0]];
        let y = [0, 0, 1, 1];
        let mut knn = step("kNN", Role::Classifier);
        knn.hparams.insert("nNeighbors".into(), HParamValue::Int(1));
        let spec = WorkflowSpec { steps: vec![step("minMaxScaler", Role::Preprocessing), knn] };
        let p = fit_pipeline(&spec, x.view(), &y, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.predict(x.view()).unwrap(), y.to_vec());

        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"schema_version\":1"));
        let back: FittedPipeline = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let bumped = json.replace("\"schema_version\":1", "\"schema_version\":2");
        assert!(serde_json::from_str::<FittedPipeline>(&bumped).is_err());
    }

    #[test]
    fn hook_can_abort() {
        let x = array![[0.0], [1.0]];
        let spec = WorkflowSpec { steps: vec![step("gaussianNB", Role::Classifier)] };
        let r = fit_pipeline_with(&spec, x.view(), &[0, 1], 2, &mut ChaCha8Rng::seed_from_u64(0), |_, _| {
            Err(StepError::EmptyInput)
        });
        assert_eq!(r.unwrap_err(), StepError::EmptyInput);
    }
}
