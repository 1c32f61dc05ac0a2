//! Individuals, binary tournament selection and the four variation
//! operators.
//!
//! Operators never touch fitness directly. A child whose genotype differs
//! from its parent loses the parent's evaluation; a child that comes out
//! identical keeps it.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::encoding::{common_slots, hparam_slots, to_phenotype, HParamSlotRef, WorkflowSpec};
use crate::grammar::{DerivationTree, Grammar, NtId, Role};

/// Retries allowed when a structural crossover produces an oversized child.
pub const CX_STRUCT_RETRIES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub predictions: Arc<[usize]>,
    pub timed_out: bool,
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub id: u64,
    genotype: DerivationTree,
    phenotype: WorkflowSpec,
    slots: Vec<HParamSlotRef>,
    evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VariationError {
    #[error("cannot select from an empty population")]
    EmptyPopulation,
}

impl Individual {
    pub fn new(id: u64, genotype: DerivationTree, g: &Grammar) -> Self {
        let phenotype = to_phenotype(&genotype, g);
        let slots = hparam_slots(&genotype, g);
        Individual { id, genotype, phenotype, slots, evaluation: None }
    }

    pub fn genotype(&self) -> &DerivationTree {
        &self.genotype
    }

    pub fn phenotype(&self) -> &WorkflowSpec {
        &self.phenotype
    }

    pub fn slots(&self) -> &[HParamSlotRef] {
        &self.slots
    }

    pub fn evaluation(&self) -> Option<&Evaluation> {
        self.evaluation.as_ref()
    }

    pub fn fitness(&self) -> Option<f64> {
        self.evaluation.as_ref().map(|e| e.fitness)
    }

    pub fn predictions(&self) -> Option<&[usize]> {
        self.evaluation.as_ref().map(|e| &*e.predictions)
    }

    pub fn is_evaluated(&self) -> bool {
        self.evaluation.is_some()
    }

    pub fn set_evaluation(&mut self, e: Evaluation) {
        self.evaluation = Some(e);
    }

    /// Replaces the genotype. The evaluation survives only when the new tree
    /// equals the old one.
    pub fn with_genotype(mut self, genotype: DerivationTree, g: &Grammar) -> Self {
        if genotype != self.genotype {
            self.phenotype = to_phenotype(&genotype, g);
            self.slots = hparam_slots(&genotype, g);
            self.genotype = genotype;
            self.evaluation = None;
        }
        self
    }
}

fn fitness_or_zero(ind: &Individual) -> f64 {
    ind.fitness().unwrap_or(0.0)
}

/// Binary tournament with replacement; the fitter of two uniform draws wins,
/// equal fitness goes to the lower id.
pub fn select_tournament<R: Rng + ?Sized>(
    pop: &[Individual],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Individual>, VariationError> {
    if pop.is_empty() {
        return Err(VariationError::EmptyPopulation);
    }
    Ok((0..count)
        .map(|_| {
            let a = &pop[rng.random_range(0..pop.len())];
            let b = &pop[rng.random_range(0..pop.len())];
            let (fa, fb) = (fitness_or_zero(a), fitness_or_zero(b));
            let winner = if fa > fb || (fa == fb && a.id <= b.id) { a } else { b };
            winner.clone()
        })
        .collect())
}

fn subtree_swap(
    a: &DerivationTree,
    b: &DerivationTree,
    pa: &[usize],
    pb: &[usize],
) -> (DerivationTree, DerivationTree) {
    let mut ca = a.clone();
    let mut cb = b.clone();
    let sa = a.get(pa).expect("path from the same tree").clone();
    let sb = b.get(pb).expect("path from the same tree").clone();
    *ca.get_mut(pa).expect("path from the same tree") = sb;
    *cb.get_mut(pb).expect("path from the same tree") = sa;
    (ca, cb)
}

/// Swaps the subtrees under a non-terminal common to both parents (the root
/// symbol excluded). Oversized or otherwise invalid children trigger up to
/// [`CX_STRUCT_RETRIES`] fresh attempts; after that the parents come back
/// unchanged.
pub fn cx_struct<R: Rng + ?Sized>(
    a: Individual,
    b: Individual,
    g: &Grammar,
    max_der: u32,
    rng: &mut R,
) -> (Individual, Individual) {
    let root = g.root();
    let na = a.genotype.nonterminal_paths();
    let nb = b.genotype.nonterminal_paths();
    let mut common: Vec<NtId> = na
        .iter()
        .map(|(_, s)| *s)
        .filter(|s| *s != root && nb.iter().any(|(_, t)| t == s))
        .collect();
    common.sort();
    common.dedup();
    if common.is_empty() {
        return (a, b);
    }

    for _ in 0..=CX_STRUCT_RETRIES {
        let sym = common[rng.random_range(0..common.len())];
        let occ_a: Vec<&Vec<usize>> = na.iter().filter(|(_, s)| *s == sym).map(|(p, _)| p).collect();
        let occ_b: Vec<&Vec<usize>> = nb.iter().filter(|(_, s)| *s == sym).map(|(p, _)| p).collect();
        let pa = occ_a[rng.random_range(0..occ_a.len())];
        let pb = occ_b[rng.random_range(0..occ_b.len())];
        let (ta, tb) = subtree_swap(&a.genotype, &b.genotype, pa, pb);
        if ta.check(g, max_der).is_ok() && tb.check(g, max_der).is_ok() {
            return (a.with_genotype(ta, g), b.with_genotype(tb, g));
        }
    }
    (a, b)
}

/// One-point crossover over the common hyper-parameter list: every pair at
/// or after a cut drawn from `1..m` exchanges its values. Needs at least two
/// common pairs; with fewer the parents are returned as they are.
pub fn cx_hparams<R: Rng + ?Sized>(
    a: Individual,
    b: Individual,
    g: &Grammar,
    rng: &mut R,
) -> (Individual, Individual) {
    let pairs = common_slots(&a.slots, &b.slots);
    let m = pairs.len();
    debug_assert!(m >= 2, "cx_hparams needs two common hyper-parameters");
    if m < 2 {
        return (a, b);
    }
    let cut = rng.random_range(1..m);
    let mut ta = a.genotype.clone();
    let mut tb = b.genotype.clone();
    for (sa, sb) in &pairs[cut..] {
        let la = ta.get_mut(&sa.path).expect("slot path");
        let lb = tb.get_mut(&sb.path).expect("slot path");
        if let (DerivationTree::Leaf { value: va, .. }, DerivationTree::Leaf { value: vb, .. }) = (la, lb) {
            std::mem::swap(va, vb);
        }
    }
    (a.with_genotype(ta, g), b.with_genotype(tb, g))
}

/// Re-derives a uniformly chosen non-terminal occurrence under the budget
/// left by the rest of the tree, then samples the new hyper-parameters.
pub fn mut_struct<R: Rng + ?Sized>(ind: Individual, g: &Grammar, max_der: u32, rng: &mut R) -> Individual {
    let nodes = ind.genotype.nonterminal_paths();
    let (path, sym) = &nodes[rng.random_range(0..nodes.len())];
    let total = ind.genotype.structural_count(g);
    let inside = ind.genotype.get(path).expect("path from the same tree").structural_count(g);
    let budget = max_der.saturating_sub(total - inside).max(inside);
    let (fresh, _) = DerivationTree::derive(g, *sym, budget, rng).expect("the current branch proves feasibility");
    let mut t = ind.genotype.clone();
    *t.get_mut(path).expect("path from the same tree") = fresh;
    t.bind_unbound(g, rng);
    ind.with_genotype(t, g)
}

/// Which slots [`mut_hparams`] resamples: each preprocessing slot with
/// probability `1/P` and each classifier slot with probability `1/C`, where
/// `P` and `C` count the slots of each kind.
pub fn hparam_mutation_mask<R: Rng + ?Sized>(ind: &Individual, rng: &mut R) -> Vec<bool> {
    let role_of = |s: &HParamSlotRef| ind.phenotype.steps[s.step].role;
    let p = ind.slots.iter().filter(|s| role_of(s) == Role::Preprocessing).count();
    let c = ind.slots.len() - p;
    ind.slots
        .iter()
        .map(|s| {
            let n = if role_of(s) == Role::Preprocessing { p } else { c };
            rng.random_bool(1.0 / n as f64)
        })
        .collect()
}

/// Resamples the slots picked by [`hparam_mutation_mask`] from their
/// domains. A resample may draw the value already bound.
pub fn mut_hparams<R: Rng + ?Sized>(ind: Individual, g: &Grammar, rng: &mut R) -> Individual {
    if ind.slots.is_empty() {
        return ind;
    }
    let mask = hparam_mutation_mask(&ind, rng);
    let mut t = ind.genotype.clone();
    for (s, _) in ind.slots.iter().zip(&mask).filter(|(_, &m)| m) {
        let d = g.domain(&s.algorithm, &s.hparam).expect("validated grammar has every domain");
        if let Some(DerivationTree::Leaf { value, .. }) = t.get_mut(&s.path) {
            *value = Some(d.sample(rng));
        }
    }
    ind.with_genotype(t, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_ind(g: &Grammar, id: u64, rng: &mut ChaCha8Rng) -> Individual {
        Individual::new(id, DerivationTree::random(g, 13, rng).unwrap(), g)
    }

    fn evaluated(mut ind: Individual, fitness: f64) -> Individual {
        ind.set_evaluation(Evaluation { fitness, predictions: Arc::from(vec![0usize]), timed_out: false });
        ind
    }

    #[test]
    fn tournament_picks_the_fitter() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = evaluated(random_ind(&g, 0, &mut rng), 0.9);
        let b = evaluated(random_ind(&g, 1, &mut rng), 0.1);
        let pop = vec![a, b];
        for s in select_tournament(&pop, 200, &mut rng).unwrap() {
            assert!(s.id == 0 || s.id == 1);
        }
        let single = select_tournament(&pop[..1], 5, &mut rng).unwrap();
        assert!(single.iter().all(|s| s.id == 0));
        assert_eq!(select_tournament(&[], 1, &mut rng).unwrap_err(), VariationError::EmptyPopulation);
    }

    #[test]
    fn equal_fitness_goes_to_lower_id() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = evaluated(random_ind(&g, 7, &mut rng), 0.5);
        let b = evaluated(random_ind(&g, 3, &mut rng), 0.5);
        let pop = vec![a, b];
        let picks = select_tournament(&pop, 400, &mut rng).unwrap();
        // Only the (7, 7) draw can yield id 7: expected share 1/4.
        let sevens = picks.iter().filter(|s| s.id == 7).count();
        assert!(sevens > 60 && sevens < 140, "{sevens}");
    }

    #[test]
    fn identical_parents_survive_structural_crossover() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = evaluated(random_ind(&g, 0, &mut rng), 0.7);
        let b = a.clone();
        let (ca, cb) = cx_struct(a.clone(), b, &g, 13, &mut rng);
        assert_eq!(ca.genotype(), a.genotype());
        assert_eq!(cb.genotype(), a.genotype());
        assert_eq!(ca.fitness(), Some(0.7));
    }

    #[test]
    fn root_budget_two_forces_a_bare_classifier() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let ind = Individual::new(0, DerivationTree::random(&g, 2, &mut rng).unwrap(), &g);
            let m = mut_struct(ind, &g, 2, &mut rng);
            assert_eq!(m.phenotype().steps.len(), 1);
        }
    }

    #[test]
    fn slotless_workflow_is_left_alone() {
        let g = crate::grammar::parse_grammar(
            "%structural <workflow>\n<workflow> ::= minMaxScaler gaussianNB\n",
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ind = evaluated(Individual::new(0, DerivationTree::random(&g, 5, &mut rng).unwrap(), &g), 0.4);
        let m = mut_hparams(ind, &g, &mut rng);
        assert_eq!(m.fitness(), Some(0.4));
    }
}
