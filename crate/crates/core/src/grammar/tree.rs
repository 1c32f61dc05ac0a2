use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Grammar, GrammarError, HParamValue, NtId, Symbol, TermId, TerminalKind};

/// Child indices from the root down to a node.
pub type Path = Vec<usize>;

/// Genotype of an individual: the production applications rooted at the
/// grammar's start symbol. Hyper-parameter leaves carry their bound value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DerivationTree {
    Node { symbol: NtId, alt: usize, children: Vec<DerivationTree> },
    Leaf { symbol: TermId, value: Option<HParamValue> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("root is not the grammar's start symbol")]
    WrongRoot,
    #[error("node at {0:?} refers to an unknown symbol")]
    UnknownSymbol(Path),
    #[error("node at {0:?} does not match its chosen alternative")]
    AlternativeMismatch(Path),
    #[error("algorithm leaf at {0:?} carries a value")]
    ValueOnAlgorithm(Path),
    #[error("hyper-parameter leaf at {0:?} has no owning algorithm or domain")]
    UnknownSlot(Path),
    #[error("hyper-parameter leaf at {0:?} is unbound")]
    Unbound(Path),
    #[error("hyper-parameter leaf at {0:?} holds a value outside its domain")]
    OutOfDomain(Path),
    #[error("{count} structural derivations exceed the limit of {limit}")]
    OverBudget { count: u32, limit: u32 },
}

impl DerivationTree {
    /// Samples a complete derivation with at most `max_der` structural
    /// derivations. At every expansion the alternative is drawn uniformly
    /// among those that can still complete within the remaining budget, then
    /// every hyper-parameter leaf is bound by sampling its domain.
    pub fn random<R: Rng + ?Sized>(g: &Grammar, max_der: u32, rng: &mut R) -> Result<Self, GrammarError> {
        let mut tree = Self::derive(g, g.root(), max_der, rng)?.0;
        tree.bind_unbound(g, rng);
        Ok(tree)
    }

    /// Derives `nt` without binding hyper-parameter values. Returns the
    /// subtree and the structural derivations it used.
    pub(crate) fn derive<R: Rng + ?Sized>(
        g: &Grammar,
        nt: NtId,
        budget: u32,
        rng: &mut R,
    ) -> Result<(Self, u32), GrammarError> {
        let rule = g.rule(nt);
        let own = rule.structural as u32;
        let feasible: Vec<usize> = (0..rule.alternatives.len())
            .filter(|&i| own + g.alternative_cost(&rule.alternatives[i]) <= budget)
            .collect();
        if feasible.is_empty() {
            return Err(GrammarError::BudgetInfeasible { budget, minimum: g.min_cost(nt) });
        }
        let alt = feasible[rng.random_range(0..feasible.len())];
        let syms = &rule.alternatives[alt];

        let mut reserve = vec![0u32; syms.len() + 1];
        for i in (0..syms.len()).rev() {
            reserve[i] = reserve[i + 1]
                + match syms[i] {
                    Symbol::T(_) => 0,
                    Symbol::N(n) => g.min_cost(n),
                };
        }

        let mut remaining = budget - own;
        let mut used = own;
        let mut children = Vec::with_capacity(syms.len());
        for (i, s) in syms.iter().enumerate() {
            match *s {
                Symbol::T(t) => children.push(DerivationTree::Leaf { symbol: t, value: None }),
                Symbol::N(n) => {
                    let (child, u) = Self::derive(g, n, remaining - reserve[i + 1], rng)?;
                    remaining -= u;
                    used += u;
                    children.push(child);
                }
            }
        }
        Ok((DerivationTree::Node { symbol: nt, alt, children }, used))
    }

    /// Samples a value for every unbound hyper-parameter leaf.
    pub(crate) fn bind_unbound<R: Rng + ?Sized>(&mut self, g: &Grammar, rng: &mut R) {
        fn walk<R: Rng + ?Sized>(t: &mut DerivationTree, g: &Grammar, cur: &mut Option<TermId>, rng: &mut R) {
            match t {
                DerivationTree::Node { children, .. } => {
                    for c in children {
                        walk(c, g, cur, rng);
                    }
                }
                DerivationTree::Leaf { symbol, value } => match g.terminal_kind(*symbol) {
                    TerminalKind::Algorithm(_) => *cur = Some(*symbol),
                    TerminalKind::HParamSlot => {
                        if value.is_none() {
                            let alg = cur.expect("validated grammar attributes every slot");
                            let d = g.slot_domain(alg, *symbol).expect("validated grammar has every domain");
                            *value = Some(d.sample(rng));
                        }
                    }
                },
            }
        }
        let mut cur = None;
        walk(self, g, &mut cur, rng);
    }

    /// Number of expansions of structural rules in the tree.
    pub fn structural_count(&self, g: &Grammar) -> u32 {
        match self {
            DerivationTree::Leaf { .. } => 0,
            DerivationTree::Node { symbol, children, .. } => {
                g.is_structural(*symbol) as u32 + children.iter().map(|c| c.structural_count(g)).sum::<u32>()
            }
        }
    }

    /// Every non-terminal node in pre-order, with its path.
    pub fn nonterminal_paths(&self) -> Vec<(Path, NtId)> {
        fn walk(t: &DerivationTree, path: &mut Path, out: &mut Vec<(Path, NtId)>) {
            if let DerivationTree::Node { symbol, children, .. } = t {
                out.push((path.clone(), *symbol));
                for (i, c) in children.iter().enumerate() {
                    path.push(i);
                    walk(c, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    /// Every leaf in left-to-right order, with its path.
    pub fn leaves(&self) -> Vec<(Path, TermId, Option<&HParamValue>)> {
        fn walk<'a>(t: &'a DerivationTree, path: &mut Path, out: &mut Vec<(Path, TermId, Option<&'a HParamValue>)>) {
            match t {
                DerivationTree::Node { children, .. } => {
                    for (i, c) in children.iter().enumerate() {
                        path.push(i);
                        walk(c, path, out);
                        path.pop();
                    }
                }
                DerivationTree::Leaf { symbol, value } => out.push((path.clone(), *symbol, value.as_ref())),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn get(&self, path: &[usize]) -> Option<&DerivationTree> {
        path.iter().try_fold(self, |t, &i| match t {
            DerivationTree::Node { children, .. } => children.get(i),
            DerivationTree::Leaf { .. } => None,
        })
    }

    pub fn get_mut(&mut self, path: &[usize]) -> Option<&mut DerivationTree> {
        path.iter().try_fold(self, |t, &i| match t {
            DerivationTree::Node { children, .. } => children.get_mut(i),
            DerivationTree::Leaf { .. } => None,
        })
    }

    pub fn symbol(&self) -> Symbol {
        match self {
            DerivationTree::Node { symbol, .. } => Symbol::N(*symbol),
            DerivationTree::Leaf { symbol, .. } => Symbol::T(*symbol),
        }
    }

    /// Checks every genotype invariant against the grammar and budget.
    pub fn check(&self, g: &Grammar, max_der: u32) -> Result<(), TreeError> {
        if self.symbol() != Symbol::N(g.root()) {
            return Err(TreeError::WrongRoot);
        }
        let mut cur = None;
        check_node(self, g, &mut Vec::new(), &mut cur)?;
        let count = self.structural_count(g);
        if count > max_der {
            return Err(TreeError::OverBudget { count, limit: max_der });
        }
        Ok(())
    }
}

fn check_node(t: &DerivationTree, g: &Grammar, path: &mut Path, cur: &mut Option<TermId>) -> Result<(), TreeError> {
    match t {
        DerivationTree::Node { symbol, alt, children } => {
            if symbol.0 as usize >= g.nonterminal_count() {
                return Err(TreeError::UnknownSymbol(path.clone()));
            }
            let rule = g.rule(*symbol);
            let expected = rule
                .alternatives
                .get(*alt)
                .ok_or_else(|| TreeError::AlternativeMismatch(path.clone()))?;
            if expected.len() != children.len()
                || expected.iter().zip(children).any(|(s, c)| *s != c.symbol())
            {
                return Err(TreeError::AlternativeMismatch(path.clone()));
            }
            for (i, c) in children.iter().enumerate() {
                path.push(i);
                check_node(c, g, path, cur)?;
                path.pop();
            }
            Ok(())
        }
        DerivationTree::Leaf { symbol, value } => {
            if symbol.0 as usize >= g.terminal_count() {
                return Err(TreeError::UnknownSymbol(path.clone()));
            }
            match g.terminal_kind(*symbol) {
                TerminalKind::Algorithm(_) => {
                    if value.is_some() {
                        return Err(TreeError::ValueOnAlgorithm(path.clone()));
                    }
                    *cur = Some(*symbol);
                    Ok(())
                }
                TerminalKind::HParamSlot => {
                    let domain = cur
                        .and_then(|a| g.slot_domain(a, *symbol))
                        .ok_or_else(|| TreeError::UnknownSlot(path.clone()))?;
                    match value {
                        None => Err(TreeError::Unbound(path.clone())),
                        Some(v) if !domain.contains(v) => Err(TreeError::OutOfDomain(path.clone())),
                        Some(_) => Ok(()),
                    }
                }
            }
        }
    }
}

/// Free-function form of [`DerivationTree::structural_count`].
pub fn structural_derivation_count(t: &DerivationTree, g: &Grammar) -> u32 {
    t.structural_count(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn budget_two_forces_bare_classifier() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let t = DerivationTree::random(&g, 2, &mut rng).unwrap();
            t.check(&g, 2).unwrap();
            assert_eq!(t.structural_count(&g), 2);
            let DerivationTree::Node { children, .. } = &t else { panic!() };
            assert_eq!(children.len(), 1);
        }
    }

    #[test]
    fn budget_below_minimum_is_reported() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = DerivationTree::random(&g, 1, &mut rng).unwrap_err();
        assert!(matches!(err, GrammarError::BudgetInfeasible { budget: 1, minimum: 2 }));
    }

    #[test]
    fn same_seed_same_tree() {
        let g = Grammar::default_workflow();
        let a = DerivationTree::random(&g, 13, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = DerivationTree::random(&g, 13, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn tampered_trees_fail_checks() {
        let g = Grammar::default_workflow();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = DerivationTree::random(&g, 13, &mut rng).unwrap();

        let (slot, _, _) = t
            .leaves()
            .into_iter()
            .find(|(_, s, _)| g.terminal_kind(*s) == TerminalKind::HParamSlot)
            .unwrap();
        let mut unbound = t.clone();
        if let Some(DerivationTree::Leaf { value, .. }) = unbound.get_mut(&slot) {
            *value = None;
        }
        assert_eq!(unbound.check(&g, 13), Err(TreeError::Unbound(slot.clone())));

        let mut wrong = t.clone();
        if let Some(DerivationTree::Leaf { value, .. }) = wrong.get_mut(&slot) {
            *value = Some(HParamValue::Cat("nonsense".into()));
        }
        assert_eq!(wrong.check(&g, 13), Err(TreeError::OutOfDomain(slot)));

        let mut bad_alt = t.clone();
        if let DerivationTree::Node { alt, .. } = &mut bad_alt {
            *alt = 1 - *alt;
        }
        assert!(matches!(bad_alt.check(&g, 13), Err(TreeError::AlternativeMismatch(_))));

        let count = t.structural_count(&g);
        if count > 2 {
            assert!(matches!(t.check(&g, count - 1), Err(TreeError::OverBudget { .. })));
        }
    }
}
