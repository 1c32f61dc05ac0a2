//! Genotype to phenotype mapping.
//!
//! A derivation tree is read left to right: every algorithm terminal opens a
//! new step and every hyper-parameter leaf that follows it binds one entry of
//! that step.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{DerivationTree, Grammar, HParamValue, Path, Role, TerminalKind};
use crate::variation::Individual;

/// One algorithm of a workflow with its bound hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub algorithm: String,
    pub role: Role,
    pub hparams: IndexMap<String, HParamValue>,
}

/// Phenotype: preprocessing steps in execution order, then one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub steps: Vec<StepSpec>,
}

/// Location of one bound hyper-parameter in both representations.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HParamSlotRef {
    pub step: usize,
    pub algorithm: String,
    pub hparam: String,
    pub path: Path,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("workflow has no steps")]
    Empty,
    #[error("workflow does not end with a classifier")]
    MissingClassifier,
    #[error("step {0} is a classifier but not the last step")]
    ClassifierNotLast(usize),
    #[error("step {step} ({algorithm}) has no domain for hyper-parameter {hparam}")]
    UnknownHParam { step: usize, algorithm: String, hparam: String },
    #[error("step {step} ({algorithm}) binds {hparam} outside its domain")]
    OutOfDomain { step: usize, algorithm: String, hparam: String },
}

/// Maps a well-formed genotype to its workflow.
///
/// # Panics
/// If the tree has a hyper-parameter leaf before any algorithm terminal or
/// an unbound leaf. Trees accepted by [`DerivationTree::check`] never do.
pub fn to_phenotype(t: &DerivationTree, g: &Grammar) -> WorkflowSpec {
    let mut steps: Vec<StepSpec> = Vec::new();
    for (_, sym, value) in t.leaves() {
        match g.terminal_kind(sym) {
            TerminalKind::Algorithm(role) => steps.push(StepSpec {
                algorithm: g.terminal_name(sym).to_string(),
                role,
                hparams: IndexMap::new(),
            }),
            TerminalKind::HParamSlot => {
                let step = steps.last_mut().expect("hyper-parameter leaf before any algorithm");
                let v = value.expect("unbound hyper-parameter leaf").clone();
                step.hparams.insert(g.terminal_name(sym).to_string(), v);
            }
        }
    }
    WorkflowSpec { steps }
}

/// Every hyper-parameter leaf of `t` in left-to-right order.
pub fn hparam_slots(t: &DerivationTree, g: &Grammar) -> Vec<HParamSlotRef> {
    let mut out = Vec::new();
    let mut step: Option<(usize, &str)> = None;
    let mut next = 0;
    for (path, sym, _) in t.leaves() {
        match g.terminal_kind(sym) {
            TerminalKind::Algorithm(_) => {
                step = Some((next, g.terminal_name(sym)));
                next += 1;
            }
            TerminalKind::HParamSlot => {
                let (i, alg) = step.expect("hyper-parameter leaf before any algorithm");
                out.push(HParamSlotRef {
                    step: i,
                    algorithm: alg.to_string(),
                    hparam: g.terminal_name(sym).to_string(),
                    path,
                });
            }
        }
    }
    out
}

/// Checks the workflow shape and, when a grammar is given, every bound value
/// against its domain.
pub fn check_workflow(w: &WorkflowSpec, g: Option<&Grammar>) -> Result<(), WorkflowError> {
    let Some(last) = w.steps.last() else {
        return Err(WorkflowError::Empty);
    };
    if last.role != Role::Classifier {
        return Err(WorkflowError::MissingClassifier);
    }
    if let Some(i) = w.steps[..w.steps.len() - 1].iter().position(|s| s.role != Role::Preprocessing) {
        return Err(WorkflowError::ClassifierNotLast(i));
    }
    if let Some(g) = g {
        for (i, s) in w.steps.iter().enumerate() {
            for (name, value) in &s.hparams {
                let err = |out: bool| {
                    let (step, algorithm, hparam) = (i, s.algorithm.clone(), name.clone());
                    if out {
                        WorkflowError::OutOfDomain { step, algorithm, hparam }
                    } else {
                        WorkflowError::UnknownHParam { step, algorithm, hparam }
                    }
                };
                let d = g.domain(&s.algorithm, name).ok_or_else(|| err(false))?;
                if !d.contains(value) {
                    return Err(err(true));
                }
            }
        }
    }
    Ok(())
}

/// Pairs of hyper-parameter slots shared by two slot lists. The k-th
/// occurrence of an algorithm in `a` is matched with its k-th occurrence in
/// `b`; pairs come out in the order of `a`.
pub fn common_slots(a: &[HParamSlotRef], b: &[HParamSlotRef]) -> Vec<(HParamSlotRef, HParamSlotRef)> {
    // (algorithm, occurrence, hparam) -> slot in b
    fn keyed(slots: &[HParamSlotRef]) -> Vec<((&str, usize, &str), &HParamSlotRef)> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut occurrence_of_step: HashMap<usize, usize> = HashMap::new();
        slots
            .iter()
            .map(|s| {
                let occ = *occurrence_of_step.entry(s.step).or_insert_with(|| {
                    let c = seen.entry(s.algorithm.as_str()).or_insert(0);
                    *c += 1;
                    *c - 1
                });
                ((s.algorithm.as_str(), occ, s.hparam.as_str()), s)
            })
            .collect()
    }
    let mut in_b: HashMap<(&str, usize, &str), &HParamSlotRef> = HashMap::new();
    for (k, s) in keyed(b) {
        in_b.entry(k).or_insert(s);
    }
    keyed(a)
        .into_iter()
        .filter_map(|(k, s)| in_b.remove(&k).map(|t| (s.clone(), t.clone())))
        .collect()
}

/// Hyper-parameters present in both parents, see [`common_slots`].
pub fn common_hparams(a: &Individual, b: &Individual) -> Vec<(HParamSlotRef, HParamSlotRef)> {
    common_slots(a.slots(), b.slots())
}

impl WorkflowSpec {
    pub fn classifier(&self) -> &StepSpec {
        self.steps.last().expect("a workflow has at least one step")
    }

    pub fn preprocessing(&self) -> &[StepSpec] {
        &self.steps[..self.steps.len().saturating_sub(1)]
    }

    pub fn hparam_count(&self) -> usize {
        self.steps.iter().map(|s| s.hparams.len()).sum()
    }
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.algorithm)?;
        for (i, (k, v)) in self.hparams.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}={v}")?;
        }
        write!(f, ")")
    }
}

/// Renders as `alg(h=v,...) -> ... -> classifier(...)`.
impl fmt::Display for WorkflowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                write!(f, " -> ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Symbol;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf(g: &Grammar, name: &str, value: Option<HParamValue>) -> DerivationTree {
        DerivationTree::Leaf { symbol: g.terminal(name).unwrap(), value }
    }

    fn node(g: &Grammar, nt: &str, children: Vec<DerivationTree>) -> DerivationTree {
        let symbol = g.nonterminal(nt.trim_matches(|c| c == '<' || c == '>')).unwrap();
        let syms: Vec<Symbol> = children.iter().map(|c| c.symbol()).collect();
        let alt = g.rule(symbol).alternatives.iter().position(|a| *a == syms).unwrap();
        DerivationTree::Node { symbol, alt, children }
    }

    fn pca_knn(g: &Grammar) -> DerivationTree {
        let pca = node(
            g,
            "<preprocess>",
            vec![
                leaf(g, "pca", None),
                node(
                    g,
                    "<pca_hp>",
                    vec![
                        leaf(g, "whiten", Some(HParamValue::Bool(false))),
                        leaf(g, "nComponents", Some(HParamValue::Int(7))),
                    ],
                ),
            ],
        );
        let knn = node(
            g,
            "<classifier>",
            vec![
                leaf(g, "kNN", None),
                node(
                    g,
                    "<kNN_hp>",
                    vec![
                        leaf(g, "nNeighbors", Some(HParamValue::Int(5))),
                        leaf(g, "weights", Some(HParamValue::Cat("uniform".into()))),
                        leaf(g, "p", Some(HParamValue::Int(2))),
                    ],
                ),
            ],
        );
        node(g, "<workflow>", vec![node(g, "<prepBranch>", vec![pca]), knn])
    }

    #[test]
    fn pca_then_knn() {
        let g = Grammar::default_workflow();
        let t = pca_knn(&g);
        t.check(&g, 13).unwrap();
        let w = to_phenotype(&t, &g);
        check_workflow(&w, Some(&g)).unwrap();
        assert_eq!(w.steps.len(), 2);
        assert_eq!(w.classifier().algorithm, "kNN");
        assert_eq!(w.to_string(), "pca(whiten=false,nComponents=7) -> kNN(nNeighbors=5,weights=uniform,p=2)");
        assert_eq!(hparam_slots(&t, &g).len(), w.hparam_count());
    }

    #[test]
    fn bare_classifier() {
        let g = Grammar::default_workflow();
        let t = node(
            &g,
            "<workflow>",
            vec![node(
                &g,
                "<classifier>",
                vec![
                    leaf(&g, "gaussianNB", None),
                    node(&g, "<gaussianNB_hp>", vec![leaf(&g, "varSmoothing", Some(HParamValue::Real(1e-9)))]),
                ],
            )],
        );
        let w = to_phenotype(&t, &g);
        assert_eq!(w.steps.len(), 1);
        assert_eq!(w.classifier().role, Role::Classifier);
    }

    #[test]
    fn shape_errors() {
        let step = |alg: &str, role| StepSpec { algorithm: alg.into(), role, hparams: IndexMap::new() };
        assert_eq!(check_workflow(&WorkflowSpec { steps: vec![] }, None), Err(WorkflowError::Empty));
        let w = WorkflowSpec { steps: vec![step("kNN", Role::Classifier), step("pca", Role::Preprocessing)] };
        assert_eq!(check_workflow(&w, None), Err(WorkflowError::MissingClassifier));
        let w = WorkflowSpec { steps: vec![step("kNN", Role::Classifier), step("kNN", Role::Classifier)] };
        assert_eq!(check_workflow(&w, None), Err(WorkflowError::ClassifierNotLast(0)));
    }

    fn slot(step: usize, alg: &str, hp: &str) -> HParamSlotRef {
        HParamSlotRef { step, algorithm: alg.into(), hparam: hp.into(), path: vec![step] }
    }

    #[test]
    fn duplicate_algorithms_match_by_occurrence() {
        let a = vec![slot(0, "normalizer", "norm"), slot(1, "normalizer", "norm"), slot(2, "kNN", "p")];
        let b = vec![slot(0, "normalizer", "norm"), slot(1, "gaussianNB", "varSmoothing")];
        let pairs = common_slots(&a, &b);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0.step, 0);
        assert_eq!(common_slots(&b, &a).len(), 1);
    }

    #[test]
    fn disjoint_algorithms_share_nothing() {
        let a = vec![slot(0, "pca", "whiten")];
        let b = vec![slot(0, "rbfSampler", "gamma")];
        assert!(common_slots(&a, &b).is_empty());
    }

    #[test]
    fn random_trees_map_to_valid_workflows() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let t = DerivationTree::random(&g, 13, &mut rng).unwrap();
            let w = to_phenotype(&t, &g);
            check_workflow(&w, Some(&g)).unwrap();
            assert!(w.steps.len() <= 6);
            assert_eq!(hparam_slots(&t, &g).len(), w.hparam_count());
        }
    }
}
