//! Context-free workflow grammars with attached hyper-parameter domains.
//!
//! A [`Grammar`] is the four-tuple (root, non-terminals, terminals, rules)
//! plus a table mapping every `(algorithm, hyper-parameter)` slot to its
//! [`HParamDomain`]. Terminals are tagged as preprocessing algorithms,
//! classifier algorithms, or hyper-parameter slots. A slot belongs to the
//! algorithm terminal that precedes it in the left-to-right reading of a
//! derivation.

mod domain;
mod parse;
mod tree;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use domain::{HParamDomain, HParamValue};
pub use tree::{structural_derivation_count, DerivationTree, Path, TreeError};

/// The workflow grammar shipped with the crate.
pub const DEFAULT_GRAMMAR: &str = include_str!("../../grammars/workflow.bnf");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NtId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    N(NtId),
    T(TermId),
}

/// Role of an algorithm inside a workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Preprocessing,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalKind {
    Algorithm(Role),
    HParamSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductionRule {
    pub lhs: NtId,
    pub alternatives: Vec<Vec<Symbol>>,
    /// Expansions of this rule count toward the derivation budget.
    pub structural: bool,
}

/// A problem found while validating a grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issue {
    UndefinedNonTerminal(String),
    NonProductive(String),
    Unreachable(String),
    UnknownStructural(String),
    UnknownTerminal(String),
    RoleConflict(String),
    NoClassifier,
    RecursiveHParamRule(String),
    UnattributedSlot(String),
    MissingDomain { algorithm: String, hparam: String },
    DuplicateDomain { algorithm: String, hparam: String, line: usize },
    UnusedDomain { algorithm: String, hparam: String },
    InvalidDomain { algorithm: String, hparam: String, reason: String },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::UndefinedNonTerminal(n) => write!(f, "undefined non-terminal <{n}>"),
            Issue::NonProductive(n) => write!(f, "non-productive non-terminal <{n}>"),
            Issue::Unreachable(n) => write!(f, "non-terminal <{n}> is unreachable from the root"),
            Issue::UnknownStructural(n) => write!(f, "%structural names unknown non-terminal <{n}>"),
            Issue::UnknownTerminal(t) => write!(f, "role directive names unknown terminal {t:?}"),
            Issue::RoleConflict(t) => {
                write!(f, "terminal {t:?} is tagged both preprocessing and classifier")
            }
            Issue::NoClassifier => write!(f, "grammar has no classifier terminal"),
            Issue::RecursiveHParamRule(n) => {
                write!(f, "non-structural non-terminal <{n}> is recursive")
            }
            Issue::UnattributedSlot(h) => {
                write!(f, "hyper-parameter slot {h:?} is not preceded by an algorithm")
            }
            Issue::MissingDomain { algorithm, hparam } => {
                write!(f, "hyper-parameter slot {algorithm}.{hparam} has no domain")
            }
            Issue::DuplicateDomain { algorithm, hparam, line } => {
                write!(f, "duplicate domain entry {algorithm}.{hparam} on line {line}")
            }
            Issue::UnusedDomain { algorithm, hparam } => {
                write!(f, "domain {algorithm}.{hparam} matches no slot in the grammar")
            }
            Issue::InvalidDomain { algorithm, hparam, reason } => {
                write!(f, "invalid domain {algorithm}.{hparam}: {reason}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid grammar: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Issue>),
    #[error("derivation budget {budget} is below the minimum {minimum}")]
    BudgetInfeasible { budget: u32, minimum: u32 },
}

/// A validated workflow grammar. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Grammar {
    root: NtId,
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    terminal_kinds: Vec<TerminalKind>,
    rules: Vec<ProductionRule>,
    rule_of: Vec<Option<usize>>,
    structural: Vec<bool>,
    min_cost: Vec<Option<u32>>,
    domains: IndexMap<(String, String), HParamDomain>,
    slot_domain: HashMap<(TermId, TermId), usize>,
    hparam_nts: Vec<bool>,
    build_issues: Vec<Issue>,
}

/// Parses and validates a grammar file.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let grammar = Grammar::build(text)?;
    let issues = grammar.validate();
    if issues.is_empty() {
        Ok(grammar)
    } else {
        Err(GrammarError::Invalid(issues))
    }
}

/// Parses a grammar and lists every validation issue found.
pub fn validation_issues(text: &str) -> Result<Vec<Issue>, GrammarError> {
    Ok(Grammar::build(text)?.validate())
}

impl Grammar {
    /// The grammar shipped with the crate.
    pub fn default_workflow() -> Grammar {
        parse_grammar(DEFAULT_GRAMMAR).expect("shipped grammar is valid")
    }

    fn build(text: &str) -> Result<Grammar, GrammarError> {
        let raw = parse::parse_raw(text)?;

        let mut nt_index: HashMap<String, NtId> = HashMap::new();
        let mut nonterminals = Vec::new();
        let mut intern_nt = |name: &str, nonterminals: &mut Vec<String>| -> NtId {
            *nt_index.entry(name.to_string()).or_insert_with(|| {
                nonterminals.push(name.to_string());
                NtId(nonterminals.len() as u32 - 1)
            })
        };
        for r in &raw.rules {
            intern_nt(&r.lhs, &mut nonterminals);
        }

        let mut t_index: HashMap<String, TermId> = HashMap::new();
        let mut terminals: Vec<String> = Vec::new();

        let mut rules: Vec<ProductionRule> = Vec::new();
        let mut rule_pos: HashMap<NtId, usize> = HashMap::new();
        for r in &raw.rules {
            let lhs = intern_nt(&r.lhs, &mut nonterminals);
            let alts: Vec<Vec<Symbol>> = r
                .alternatives
                .iter()
                .map(|alt| {
                    alt.iter()
                        .map(|s| {
                            if s.nonterminal {
                                Symbol::N(intern_nt(&s.name, &mut nonterminals))
                            } else {
                                Symbol::T(*t_index.entry(s.name.clone()).or_insert_with(|| {
                                    terminals.push(s.name.clone());
                                    TermId(terminals.len() as u32 - 1)
                                }))
                            }
                        })
                        .collect()
                })
                .collect();
            match rule_pos.get(&lhs) {
                Some(&i) => rules[i].alternatives.extend(alts),
                None => {
                    rule_pos.insert(lhs, rules.len());
                    rules.push(ProductionRule { lhs, alternatives: alts, structural: false });
                }
            }
        }

        let n_nt = nonterminals.len();
        let mut rule_of = vec![None; n_nt];
        for (i, r) in rules.iter().enumerate() {
            rule_of[r.lhs.0 as usize] = Some(i);
        }

        let mut issues = Vec::new();

        // Terminal roles: explicit directives, then the built-in catalogue,
        // otherwise a hyper-parameter slot.
        let mut explicit: HashMap<&str, Role> = HashMap::new();
        for (syms, role) in [(&raw.preprocessing, Role::Preprocessing), (&raw.classifiers, Role::Classifier)] {
            for s in syms {
                if !t_index.contains_key(&s.name) {
                    issues.push(Issue::UnknownTerminal(s.name.clone()));
                }
                if let Some(prev) = explicit.insert(s.name.as_str(), role) {
                    if prev != role {
                        issues.push(Issue::RoleConflict(s.name.clone()));
                    }
                }
            }
        }
        let terminal_kinds: Vec<TerminalKind> = terminals
            .iter()
            .map(|name| {
                match explicit.get(name.as_str()).copied().or_else(|| crate::mlkit::role_of(name)) {
                    Some(role) => TerminalKind::Algorithm(role),
                    None => TerminalKind::HParamSlot,
                }
            })
            .collect();

        // Non-terminals that can derive an algorithm terminal.
        let mut emits_alg = vec![false; n_nt];
        loop {
            let mut changed = false;
            for r in &rules {
                if emits_alg[r.lhs.0 as usize] {
                    continue;
                }
                let yes = r.alternatives.iter().flatten().any(|s| match s {
                    Symbol::T(t) => matches!(terminal_kinds[t.0 as usize], TerminalKind::Algorithm(_)),
                    Symbol::N(n) => emits_alg[n.0 as usize],
                });
                if yes {
                    emits_alg[r.lhs.0 as usize] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let structural: Vec<bool> = match &raw.structural {
            Some(list) => {
                let mut flags = vec![false; n_nt];
                for s in list {
                    match nt_index.get(&s.name) {
                        Some(id) if rule_of[id.0 as usize].is_some() => flags[id.0 as usize] = true,
                        _ => issues.push(Issue::UnknownStructural(s.name.clone())),
                    }
                }
                flags
            }
            None => emits_alg.clone(),
        };
        for r in &mut rules {
            r.structural = structural[r.lhs.0 as usize];
        }
        let hparam_nts: Vec<bool> = (0..n_nt).map(|i| !emits_alg[i]).collect();

        let mut domains = IndexMap::new();
        let mut duplicate_domains = Vec::new();
        for d in &raw.domains {
            let key = (d.algorithm.clone(), d.hparam.clone());
            if domains.contains_key(&key) {
                duplicate_domains.push(Issue::DuplicateDomain {
                    algorithm: d.algorithm.clone(),
                    hparam: d.hparam.clone(),
                    line: d.line,
                });
            } else {
                domains.insert(key, d.domain.clone());
            }
        }
        issues.extend(duplicate_domains.iter().cloned());

        let mut g = Grammar {
            root: NtId(0),
            nonterminals,
            terminals,
            terminal_kinds,
            rules,
            rule_of,
            structural,
            min_cost: Vec::new(),
            domains,
            slot_domain: HashMap::new(),
            hparam_nts,
            build_issues: issues,
        };
        g.min_cost = g.compute_min_cost();
        let slots = g.attributed_slots().0;
        for (alg, hp) in slots {
            let key = (g.terminal_name(alg).to_string(), g.terminal_name(hp).to_string());
            if let Some(idx) = g.domains.get_index_of(&key) {
                g.slot_domain.insert((alg, hp), idx);
            }
        }
        Ok(g)
    }

    fn compute_min_cost(&self) -> Vec<Option<u32>> {
        let mut cost: Vec<Option<u32>> = vec![None; self.nonterminals.len()];
        loop {
            let mut changed = false;
            for r in &self.rules {
                let own = r.structural as u32;
                let best = r
                    .alternatives
                    .iter()
                    .filter_map(|alt| self.alternative_cost_with(alt, &cost))
                    .min()
                    .map(|c| c + own);
                let slot = &mut cost[r.lhs.0 as usize];
                if best.is_some() && (slot.is_none() || best < *slot) {
                    *slot = best;
                    changed = true;
                }
            }
            if !changed {
                return cost;
            }
        }
    }

    fn alternative_cost_with(&self, alt: &[Symbol], cost: &[Option<u32>]) -> Option<u32> {
        alt.iter().try_fold(0u32, |acc, s| match s {
            Symbol::T(_) => Some(acc),
            Symbol::N(n) => cost[n.0 as usize].map(|c| acc + c),
        })
    }

    /// Slot pairs (algorithm, hyper-parameter) reachable from the root, and
    /// slot terminals reachable with no preceding algorithm.
    fn attributed_slots(&self) -> (BTreeSet<(TermId, TermId)>, BTreeSet<TermId>) {
        type Ctx = Option<TermId>;
        let n_nt = self.nonterminals.len();

        // Possible "last algorithm emitted" by each non-terminal's yield.
        let mut last: Vec<BTreeSet<Ctx>> = vec![BTreeSet::new(); n_nt];
        let transfer = |cur: &BTreeSet<Ctx>, sym: &Symbol, last: &Vec<BTreeSet<Ctx>>| -> BTreeSet<Ctx> {
            match sym {
                Symbol::T(t) => match self.terminal_kinds[t.0 as usize] {
                    TerminalKind::Algorithm(_) => BTreeSet::from([Some(*t)]),
                    TerminalKind::HParamSlot => cur.clone(),
                },
                Symbol::N(n) => {
                    let mut out = BTreeSet::new();
                    for c in cur {
                        for l in &last[n.0 as usize] {
                            out.insert(if l.is_none() { *c } else { *l });
                        }
                    }
                    out
                }
            }
        };
        loop {
            let mut changed = false;
            for r in &self.rules {
                for alt in &r.alternatives {
                    let mut cur = BTreeSet::from([None]);
                    for s in alt {
                        cur = transfer(&cur, s, &last);
                    }
                    let entry = &mut last[r.lhs.0 as usize];
                    for c in cur {
                        changed |= entry.insert(c);
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut slots = BTreeSet::new();
        let mut unattributed = BTreeSet::new();
        let mut visited: BTreeSet<(NtId, Ctx)> = BTreeSet::new();
        let mut work = vec![(self.root, None)];
        while let Some((nt, ctx)) = work.pop() {
            if !visited.insert((nt, ctx)) {
                continue;
            }
            let Some(r) = self.rule_of[nt.0 as usize] else { continue };
            for alt in &self.rules[r].alternatives {
                let mut cur = BTreeSet::from([ctx]);
                for s in alt {
                    match s {
                        Symbol::T(t) if self.terminal_kinds[t.0 as usize] == TerminalKind::HParamSlot => {
                            for c in &cur {
                                match c {
                                    Some(a) => {
                                        slots.insert((*a, *t));
                                    }
                                    None => {
                                        unattributed.insert(*t);
                                    }
                                }
                            }
                        }
                        Symbol::N(n) => {
                            for c in &cur {
                                work.push((*n, *c));
                            }
                        }
                        Symbol::T(_) => {}
                    }
                    cur = transfer(&cur, s, &last);
                }
            }
        }
        (slots, unattributed)
    }

    /// Re-runs every structural check. A grammar returned by
    /// [`parse_grammar`] always reports no issues.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = self.build_issues.clone();
        let n_nt = self.nonterminals.len();

        for i in 0..n_nt {
            if self.rule_of[i].is_none() {
                issues.push(Issue::UndefinedNonTerminal(self.nonterminals[i].clone()));
            }
        }
        for i in 0..n_nt {
            if self.rule_of[i].is_some() && self.min_cost[i].is_none() {
                issues.push(Issue::NonProductive(self.nonterminals[i].clone()));
            }
        }

        let mut reach = vec![false; n_nt];
        let mut stack = vec![self.root];
        while let Some(nt) = stack.pop() {
            if std::mem::replace(&mut reach[nt.0 as usize], true) {
                continue;
            }
            if let Some(r) = self.rule_of[nt.0 as usize] {
                for s in self.rules[r].alternatives.iter().flatten() {
                    if let Symbol::N(n) = s {
                        stack.push(*n);
                    }
                }
            }
        }
        for (i, r) in reach.iter().enumerate() {
            if !r {
                issues.push(Issue::Unreachable(self.nonterminals[i].clone()));
            }
        }

        // A cycle among non-structural rules would let derivations grow
        // without consuming budget.
        let mut state = vec![0u8; n_nt];
        fn dfs(g: &Grammar, nt: usize, state: &mut Vec<u8>, out: &mut BTreeSet<usize>) {
            state[nt] = 1;
            if let Some(r) = g.rule_of[nt] {
                for s in g.rules[r].alternatives.iter().flatten() {
                    if let Symbol::N(n) = s {
                        let n = n.0 as usize;
                        if g.structural[n] {
                            continue;
                        }
                        match state[n] {
                            0 => dfs(g, n, state, out),
                            1 => {
                                out.insert(n);
                            }
                            _ => {}
                        }
                    }
                }
            }
            state[nt] = 2;
        }
        let mut recursive = BTreeSet::new();
        for i in 0..n_nt {
            if !self.structural[i] && state[i] == 0 {
                dfs(self, i, &mut state, &mut recursive);
            }
        }
        for i in recursive {
            issues.push(Issue::RecursiveHParamRule(self.nonterminals[i].clone()));
        }

        if !self.terminal_kinds.contains(&TerminalKind::Algorithm(Role::Classifier)) {
            issues.push(Issue::NoClassifier);
        }

        let (slots, unattributed) = self.attributed_slots();
        for t in unattributed {
            issues.push(Issue::UnattributedSlot(self.terminal_name(t).to_string()));
        }
        let mut used = BTreeSet::new();
        for (alg, hp) in &slots {
            let key = (self.terminal_name(*alg).to_string(), self.terminal_name(*hp).to_string());
            if self.domains.contains_key(&key) {
                used.insert(key);
            } else {
                issues.push(Issue::MissingDomain { algorithm: key.0, hparam: key.1 });
            }
        }
        for ((alg, hp), d) in &self.domains {
            if !used.contains(&(alg.clone(), hp.clone())) {
                issues.push(Issue::UnusedDomain { algorithm: alg.clone(), hparam: hp.clone() });
            }
            if let Some(reason) = d.problem() {
                issues.push(Issue::InvalidDomain { algorithm: alg.clone(), hparam: hp.clone(), reason });
            }
        }
        issues
    }

    pub fn root(&self) -> NtId {
        self.root
    }

    pub fn nonterminal_count(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals.len()
    }

    pub fn nonterminal_name(&self, nt: NtId) -> &str {
        &self.nonterminals[nt.0 as usize]
    }

    pub fn terminal_name(&self, t: TermId) -> &str {
        &self.terminals[t.0 as usize]
    }

    pub fn nonterminal(&self, name: &str) -> Option<NtId> {
        self.nonterminals.iter().position(|n| n == name).map(|i| NtId(i as u32))
    }

    pub fn terminal(&self, name: &str) -> Option<TermId> {
        self.terminals.iter().position(|n| n == name).map(|i| TermId(i as u32))
    }

    pub fn terminal_kind(&self, t: TermId) -> TerminalKind {
        self.terminal_kinds[t.0 as usize]
    }

    /// Rules in file order.
    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn rule(&self, nt: NtId) -> &ProductionRule {
        &self.rules[self.rule_of[nt.0 as usize].expect("validated grammar defines every non-terminal")]
    }

    pub fn is_structural(&self, nt: NtId) -> bool {
        self.structural[nt.0 as usize]
    }

    /// True for non-terminals that only expand into hyper-parameter slots.
    pub fn is_hparam_rule(&self, nt: NtId) -> bool {
        self.hparam_nts[nt.0 as usize]
    }

    /// Fewest structural derivations needed to complete `nt`.
    pub fn min_cost(&self, nt: NtId) -> u32 {
        self.min_cost[nt.0 as usize].expect("validated grammar is productive")
    }

    pub fn alternative_cost(&self, alt: &[Symbol]) -> u32 {
        alt.iter()
            .map(|s| match s {
                Symbol::T(_) => 0,
                Symbol::N(n) => self.min_cost(*n),
            })
            .sum()
    }

    /// Fewest structural derivations of a complete workflow.
    pub fn min_derivations(&self) -> u32 {
        self.min_cost(self.root)
    }

    pub fn domains(&self) -> &IndexMap<(String, String), HParamDomain> {
        &self.domains
    }

    pub fn domain(&self, algorithm: &str, hparam: &str) -> Option<&HParamDomain> {
        self.domains.get(&(algorithm.to_string(), hparam.to_string()))
    }

    pub fn slot_domain(&self, algorithm: TermId, hparam: TermId) -> Option<&HParamDomain> {
        self.slot_domain
            .get(&(algorithm, hparam))
            .and_then(|&i| self.domains.get_index(i))
            .map(|(_, d)| d)
    }

    /// Algorithm terminals with the given role, in order of appearance.
    pub fn algorithms(&self, role: Role) -> Vec<&str> {
        self.terminals
            .iter()
            .zip(&self.terminal_kinds)
            .filter(|(_, k)| **k == TerminalKind::Algorithm(role))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}
