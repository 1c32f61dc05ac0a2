//! Diversity-weighted elite archive and the weighted-vote ensemble built
//! from it.
//!
//! Members are ranked by `divfit = w * div + (1 - w) * fitness`, where `div`
//! is the mean fraction of training samples on which a member's
//! out-of-fold predictions disagree with the other members'.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::WorkflowSpec;
use crate::evaluation::{stream_rng, Dataset};
use crate::mlkit::{fit_pipeline, FittedPipeline, StepError};
use crate::variation::Individual;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchiveError {
    #[error("prediction vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("the archive is empty")]
    Empty,
    #[error("every archive member failed to refit")]
    AllMembersFailed,
    #[error("expected {expected} features, found {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Fraction of positions where `x` and `y` differ.
pub fn disagreement(x: &[usize], y: &[usize]) -> Result<f64, ArchiveError> {
    if x.len() != y.len() {
        return Err(ArchiveError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let differ = x.iter().zip(y).filter(|(a, b)| a != b).count();
    Ok(differ as f64 / x.len() as f64)
}

pub fn divfit(div: f64, fitness: f64, div_weight: f64) -> f64 {
    div_weight * div + (1.0 - div_weight) * fitness
}

#[derive(Debug, Clone)]
pub struct ArchiveEntry {
    pub individual: Individual,
    pub div: f64,
    pub divfit: f64,
}

impl ArchiveEntry {
    pub fn fitness(&self) -> f64 {
        self.individual.fitness().unwrap_or(0.0)
    }

    pub fn predictions(&self) -> &[usize] {
        self.individual.predictions().unwrap_or(&[])
    }
}

/// Bounded set of evaluated individuals, sorted by cached divfit.
#[derive(Debug, Clone)]
pub struct Archive {
    capacity: usize,
    div_weight: f64,
    members: Vec<ArchiveEntry>,
}

fn rank(a: &ArchiveEntry, b: &ArchiveEntry) -> Ordering {
    b.divfit
        .total_cmp(&a.divfit)
        .then_with(|| b.fitness().total_cmp(&a.fitness()))
        .then_with(|| a.individual.id.cmp(&b.individual.id))
}

fn same_individual(a: &Individual, b: &Individual) -> bool {
    a.predictions() == b.predictions() && a.phenotype() == b.phenotype()
}

impl Archive {
    pub fn new(capacity: usize, div_weight: f64) -> Self {
        Archive { capacity: capacity.max(1), div_weight, members: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn div_weight(&self) -> f64 {
        self.div_weight
    }

    pub fn members(&self) -> &[ArchiveEntry] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn individuals(&self) -> impl Iterator<Item = &Individual> {
        self.members.iter().map(|m| &m.individual)
    }

    /// Mean disagreement of member `i` with every other member; 0 for a
    /// singleton archive.
    pub fn div_member(&self, i: usize) -> f64 {
        let n = self.members.len();
        if n < 2 {
            return 0.0;
        }
        let xi = self.members[i].predictions();
        let sum: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| disagreement(xi, self.members[j].predictions()).expect("members share a training set"))
            .sum();
        sum / (n - 1) as f64
    }

    /// Mean disagreement of `predictions` with every member.
    pub fn div_candidate(&self, predictions: &[usize]) -> Result<f64, ArchiveError> {
        if self.members.is_empty() {
            return Err(ArchiveError::Empty);
        }
        let mut sum = 0.0;
        for m in &self.members {
            sum += disagreement(predictions, m.predictions())?;
        }
        Ok(sum / self.members.len() as f64)
    }

    /// Inserts the candidates with positive fitness that are not already
    /// present (same workflow and same predictions). The first fill takes
    /// the fittest `capacity` candidates and scores them against each other;
    /// later candidates are scored against the members present when the
    /// call started, whose cached scores stay as they are.
    pub fn update<'a, I>(&mut self, candidates: I)
    where
        I: IntoIterator<Item = &'a Individual>,
    {
        let mut fresh: Vec<&Individual> = Vec::new();
        for c in candidates {
            if c.fitness().is_none_or(|f| f <= 0.0) {
                continue;
            }
            if self.members.iter().any(|m| same_individual(&m.individual, c)) {
                continue;
            }
            if fresh.iter().any(|f| same_individual(f, c)) {
                continue;
            }
            fresh.push(c);
        }

        if self.members.is_empty() {
            fresh.sort_by(|a, b| {
                b.fitness().unwrap_or(0.0).total_cmp(&a.fitness().unwrap_or(0.0)).then(a.id.cmp(&b.id))
            });
            fresh.truncate(self.capacity);
            self.members = fresh
                .into_iter()
                .map(|c| ArchiveEntry { individual: c.clone(), div: 0.0, divfit: 0.0 })
                .collect();
            for i in 0..self.members.len() {
                let div = self.div_member(i);
                let m = &mut self.members[i];
                m.div = div;
                m.divfit = divfit(div, m.fitness(), self.div_weight);
            }
        } else {
            let scored: Vec<ArchiveEntry> = fresh
                .into_iter()
                .map(|c| {
                    let div = self
                        .div_candidate(c.predictions().unwrap_or(&[]))
                        .expect("archive is non-empty and members share a training set");
                    let f = c.fitness().unwrap_or(0.0);
                    ArchiveEntry { individual: c.clone(), div, divfit: divfit(div, f, self.div_weight) }
                })
                .collect();
            self.members.extend(scored);
        }
        self.members.sort_by(rank);
        self.members.truncate(self.capacity);
    }

    /// The member with the highest fitness, lowest id on ties.
    pub fn best(&self) -> Option<&Individual> {
        self.individuals().min_by(|a, b| {
            b.fitness().unwrap_or(0.0).total_cmp(&a.fitness().unwrap_or(0.0)).then(a.id.cmp(&b.id))
        })
    }
}

/// How ensemble votes are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Fitness divided by the best member's fitness.
    FitnessRatio,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub workflow: WorkflowSpec,
    pub pipeline: FittedPipeline,
    pub fitness: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_features: usize,
    pub n_classes: usize,
    pub members: Vec<EnsembleMember>,
}

/// Refits every individual on the whole training set. Members whose refit
/// fails are dropped with a warning and the weights are computed over the
/// survivors.
pub fn build_ensemble<'a, I>(
    individuals: I,
    train: &Dataset,
    weighting: Weighting,
    seed: u64,
) -> Result<Ensemble, ArchiveError>
where
    I: IntoIterator<Item = &'a Individual>,
{
    let mut fitted = Vec::new();
    for ind in individuals {
        let mut rng = stream_rng(seed, "refit", ind.id);
        match fit_pipeline(ind.phenotype(), train.features.view(), &train.labels, train.n_classes(), &mut rng) {
            Ok(pipeline) => fitted.push((ind, pipeline)),
            Err(e) => log::warn!("dropping {} from the ensemble: {e}", ind.phenotype()),
        }
    }
    if fitted.is_empty() {
        return Err(ArchiveError::AllMembersFailed);
    }
    let best = fitted.iter().map(|(i, _)| i.fitness().unwrap_or(0.0)).fold(0.0, f64::max);
    let members = fitted
        .into_iter()
        .map(|(ind, pipeline)| {
            let fitness = ind.fitness().unwrap_or(0.0);
            let weight = match weighting {
                Weighting::Uniform => 1.0,
                Weighting::FitnessRatio if best > 0.0 => fitness / best,
                Weighting::FitnessRatio => 1.0,
            };
            EnsembleMember { workflow: ind.phenotype().clone(), pipeline, fitness, weight }
        })
        .collect();
    Ok(Ensemble { n_features: train.n_features(), n_classes: train.n_classes(), members })
}

/// Weighted vote over per-member predictions; ties go to the lowest class.
pub fn weighted_vote(member_predictions: &[Vec<usize>], weights: &[f64], n_classes: usize) -> Vec<usize> {
    let n = member_predictions.first().map_or(0, Vec::len);
    let mut scores = vec![0.0; n_classes];
    (0..n)
        .map(|s| {
            scores.iter_mut().for_each(|v| *v = 0.0);
            for (p, w) in member_predictions.iter().zip(weights) {
                scores[p[s]] += w;
            }
            crate::mlkit::argmax_lowest(&scores)
        })
        .collect()
}

pub fn ensemble_predict(e: &Ensemble, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, ArchiveError> {
    if x.ncols() != e.n_features {
        return Err(ArchiveError::FeatureMismatch { expected: e.n_features, found: x.ncols() });
    }
    let preds = e.members.iter().map(|m| m.pipeline.predict(x)).collect::<Result<Vec<_>, _>>()?;
    let weights: Vec<f64> = e.members.iter().map(|m| m.weight).collect();
    Ok(weighted_vote(&preds, &weights, e.n_classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{DerivationTree, Grammar};
    use crate::variation::Evaluation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn ind(g: &Grammar, id: u64, fitness: f64, preds: &[usize]) -> Individual {
        let mut rng = ChaCha8Rng::seed_from_u64(id);
        let mut i = Individual::new(id, DerivationTree::random(g, 13, &mut rng).unwrap(), g);
        i.set_evaluation(Evaluation { fitness, predictions: Arc::from(preds.to_vec()), timed_out: false });
        i
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(disagreement(&[0, 1, 1], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(disagreement(&[0, 1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(disagreement(&[0, 0, 1, 1], &[0, 1, 1, 0]).unwrap(), 0.5);
        assert!(disagreement(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn worked_diversity_example() {
        let g = Grammar::default_workflow();
        let mut a = Archive::new(10, 0.2);
        let x1 = ind(&g, 1, 0.8, &[0, 0, 1, 1]);
        let x2 = ind(&g, 2, 0.7, &[0, 1, 1, 1]);
        let x3 = ind(&g, 3, 0.6, &[1, 1, 1, 1]);
        a.update([&x1, &x2, &x3]);
        let e1 = a.members().iter().find(|m| m.individual.id == 1).unwrap();
        assert_eq!(e1.div, 0.375);
        assert!((e1.divfit - 0.715).abs() < 1e-15);

        let mut b = Archive::new(10, 0.2);
        b.update([&x2, &x3]);
        assert_eq!(b.div_candidate(&[0, 0, 1, 1]).unwrap(), 0.375);
    }

    #[test]
    fn divfit_extremes() {
        assert_eq!(divfit(0.3, 0.9, 0.0), 0.9);
        assert_eq!(divfit(0.3, 0.9, 1.0), 0.3);
    }

    #[test]
    fn zero_fitness_and_duplicates_are_skipped() {
        let g = Grammar::default_workflow();
        let mut a = Archive::new(3, 0.2);
        let z = ind(&g, 1, 0.0, &[0, 1]);
        let p = ind(&g, 2, 0.5, &[0, 1]);
        a.update([&z, &p, &p.clone()]);
        assert_eq!(a.len(), 1);
        a.update([&p]);
        assert_eq!(a.len(), 1);
        assert!(Archive::new(1, 0.0).div_candidate(&[0]).is_err());
    }

    #[test]
    fn tied_votes_go_to_the_lowest_class() {
        let preds = vec![vec![0], vec![1], vec![1]];
        assert_eq!(weighted_vote(&preds, &[1.0, 0.5, 0.5], 2), vec![0]);
        let preds = vec![vec![2], vec![1], vec![1]];
        assert_eq!(weighted_vote(&preds, &[1.0, 0.5, 0.5], 3), vec![1]);
    }
}
