//! The evolutionary main loop: initial population, evaluation, binary
//! tournament, crossover and mutation, archive update, and the wall-clock
//! budget.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{build_ensemble, Archive, ArchiveError, Ensemble, Weighting};
use crate::encoding::common_hparams;
use crate::evaluation::{stratified_kfold, stream_rng, Dataset, EvalError, EvalResult, Evaluator, StepHook};
use crate::grammar::{DerivationTree, Grammar, GrammarError};
use crate::variation::{cx_hparams, cx_struct, mut_hparams, mut_struct, select_tournament, Evaluation, Individual};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Basic,
    OpOnly,
    EnsOnly,
    Top10,
    Top10w,
    BestSingle,
}

/// What a mode hands back at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    Ensemble(Weighting),
    BestSingle,
}

impl Mode {
    pub const ALL: [Mode; 7] =
        [Mode::Full, Mode::Basic, Mode::OpOnly, Mode::EnsOnly, Mode::Top10, Mode::Top10w, Mode::BestSingle];

    /// Hyper-parameter crossover and mutation in addition to the structural
    /// operators.
    pub fn specific_operators(self) -> bool {
        matches!(self, Mode::Full | Mode::OpOnly | Mode::BestSingle)
    }

    /// Whether the archive ranks by diversity at all.
    pub fn diverse_archive(self) -> bool {
        matches!(self, Mode::Full | Mode::EnsOnly | Mode::BestSingle)
    }

    pub fn output(self) -> Output {
        match self {
            Mode::Full | Mode::EnsOnly | Mode::Top10w => Output::Ensemble(Weighting::FitnessRatio),
            Mode::Top10 => Output::Ensemble(Weighting::Uniform),
            Mode::Basic | Mode::OpOnly | Mode::BestSingle => Output::BestSingle,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Basic => "basic",
            Mode::OpOnly => "op_only",
            Mode::EnsOnly => "ens_only",
            Mode::Top10 => "top10",
            Mode::Top10w => "top10w",
            Mode::BestSingle => "best_single",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected one of full, basic, op_only, ens_only, top10, top10w, best_single"))
    }
}

/// Search parameters. Field names serialize as `maxGen`, `popSize`, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EngineConfig {
    pub max_gen: usize,
    pub pop_size: usize,
    pub cx_prob: f64,
    pub st_mut_prob: f64,
    pub max_der: u32,
    pub arch_size: usize,
    pub div_weight: f64,
    /// Seconds.
    pub budget: f64,
    /// Seconds.
    pub eval_budget: f64,
    pub k_folds: usize,
    pub seed: u64,
    pub mode: Mode,
    pub threads: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_gen: 100,
            pop_size: 100,
            cx_prob: 0.8,
            st_mut_prob: 0.2,
            max_der: 13,
            arch_size: 10,
            div_weight: 0.2,
            budget: 3600.0,
            eval_budget: 360.0,
            k_folds: 5,
            seed: 0,
            mode: Mode::Full,
            threads: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("the archive is empty: no workflow reached a positive fitness")]
    NoWorkflow,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.pop_size < 2 || !self.pop_size.is_multiple_of(2) {
            return bad(format!("popSize must be even and at least 2, got {}", self.pop_size));
        }
        if self.arch_size < 1 {
            return bad("archSize must be at least 1".into());
        }
        for (name, p) in [("cxProb", self.cx_prob), ("stMutProb", self.st_mut_prob), ("divWeight", self.div_weight)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !self.budget.is_finite() || self.budget < 0.0 {
            return bad(format!("budget must be a non-negative number of seconds, got {}", self.budget));
        }
        if self.eval_budget.is_nan() || self.eval_budget < 0.0 || self.eval_budget > self.budget {
            return bad(format!("evalBudget must lie in [0, budget], got {}", self.eval_budget));
        }
        if self.k_folds < 2 {
            return bad(format!("kFolds must be at least 2, got {}", self.k_folds));
        }
        if self.threads < 1 {
            return bad("threads must be at least 1".into());
        }
        if self.max_der < 1 {
            return bad("maxDer must be positive".into());
        }
        Ok(())
    }

    /// Divergence weight the archive actually uses under the configured mode.
    pub fn effective_div_weight(&self) -> f64 {
        if self.mode.diverse_archive() {
            self.div_weight
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Generations,
    Budget,
}

/// Statistics of one generation. Timings are kept out so that records are
/// reproducible under a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub gen: usize,
    pub best_fit: f64,
    pub mean_fit: f64,
    pub archive_size: usize,
    pub archive_min_divfit: f64,
    pub archive_max_divfit: f64,
    pub evaluations: usize,
    pub timeouts: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSummary {
    pub id: u64,
    pub workflow: String,
    pub fitness: f64,
    pub div: f64,
    pub divfit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    /// Statistics of the initial population.
    pub initial: GenerationRecord,
    /// One record per completed generation `1..=maxGen`.
    pub generations: Vec<GenerationRecord>,
    /// Wall-clock seconds at the end of each generation.
    pub generation_elapsed_s: Vec<f64>,
    pub termination: Termination,
    pub evaluations: usize,
    pub timeouts: usize,
    pub failures: usize,
    pub best_ever_fitness: f64,
    pub best_ever_workflow: Option<String>,
    pub archive: Vec<ArchiveSummary>,
    pub elapsed_s: f64,
}

pub struct RunOutcome {
    pub archive: Archive,
    /// Fittest individual seen during the run, lowest id on ties.
    pub best_ever: Option<Individual>,
    pub report: RunReport,
}

/// Called with every individual right after its evaluation is merged.
pub type Observer = Arc<dyn Fn(&Individual, &EvalResult) + Send + Sync>;

#[derive(Clone, Default)]
pub struct RunOptions {
    pub step_hook: Option<StepHook>,
    pub observer: Option<Observer>,
}

struct Loop<'a> {
    cfg: &'a EngineConfig,
    evaluator: Evaluator<'a>,
    start: Instant,
    budget: Duration,
    pool: Option<rayon::ThreadPool>,
    observer: Option<Observer>,
    next_id: u64,
    evaluations: usize,
    timeouts: usize,
    failures: usize,
    best_ever: Option<Individual>,
}

struct GenStats {
    evaluations: usize,
    timeouts: usize,
    failures: usize,
}

impl Loop<'_> {
    fn over_budget(&self) -> bool {
        self.start.elapsed() > self.budget
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Evaluates every unevaluated individual in population order. Returns
    /// false when the budget stopped the generation early; the individuals
    /// evaluated before that keep their results.
    fn evaluate(&mut self, pop: &mut [Individual], stats: &mut GenStats) -> bool {
        let todo: Vec<usize> = (0..pop.len()).filter(|&i| !pop[i].is_evaluated()).collect();
        let seed = self.cfg.seed;
        let first_of_run = self.evaluations == 0;
        let results: Vec<Option<EvalResult>> = {
            let run_one = |k: usize, i: usize| -> Option<EvalResult> {
                if !(first_of_run && k == 0) && self.start.elapsed() > self.budget {
                    return None;
                }
                let mut rng = stream_rng(seed, "evaluate", pop[i].id);
                Some(self.evaluator.evaluate(pop[i].phenotype(), &mut rng))
            };
            match &self.pool {
                Some(pool) => pool.install(|| todo.par_iter().enumerate().map(|(k, &i)| run_one(k, i)).collect()),
                None => {
                    let mut out = Vec::with_capacity(todo.len());
                    for (k, &i) in todo.iter().enumerate() {
                        let r = run_one(k, i);
                        let stop = r.is_none();
                        out.push(r);
                        if stop {
                            break;
                        }
                    }
                    out
                }
            }
        };

        let complete = results.len() == todo.len() && results.iter().all(Option::is_some);
        for (&i, r) in todo.iter().zip(results) {
            let Some(r) = r else { continue };
            stats.evaluations += 1;
            self.evaluations += 1;
            if r.timed_out {
                stats.timeouts += 1;
                self.timeouts += 1;
            } else if r.failure.is_some() {
                stats.failures += 1;
                self.failures += 1;
            }
            pop[i].set_evaluation(Evaluation {
                fitness: r.fitness,
                predictions: Arc::from(r.predictions.as_slice()),
                timed_out: r.timed_out,
            });
            if let Some(obs) = &self.observer {
                obs(&pop[i], &r);
            }
            let better = match &self.best_ever {
                None => r.fitness > 0.0,
                Some(b) => {
                    let bf = b.fitness().unwrap_or(0.0);
                    r.fitness > bf || (r.fitness == bf && pop[i].id < b.id)
                }
            };
            if better {
                self.best_ever = Some(pop[i].clone());
            }
        }
        complete
    }
}

fn record(gen: usize, pop: &[Individual], archive: &Archive, stats: &GenStats) -> GenerationRecord {
    let fits: Vec<f64> = pop.iter().filter_map(|p| p.fitness()).collect();
    let best_fit = fits.iter().copied().fold(0.0, f64::max);
    let mean_fit = if fits.is_empty() { 0.0 } else { fits.iter().sum::<f64>() / fits.len() as f64 };
    let divfits: Vec<f64> = archive.members().iter().map(|m| m.divfit).collect();
    GenerationRecord {
        gen,
        best_fit,
        mean_fit,
        archive_size: archive.len(),
        archive_min_divfit: divfits.last().copied().unwrap_or(0.0),
        archive_max_divfit: divfits.first().copied().unwrap_or(0.0),
        evaluations: stats.evaluations,
        timeouts: stats.timeouts,
        failures: stats.failures,
    }
}

pub fn run(cfg: &EngineConfig, g: &Grammar, train: &Dataset) -> Result<RunOutcome, EngineError> {
    run_with(cfg, g, train, RunOptions::default())
}

pub fn run_with(cfg: &EngineConfig, g: &Grammar, train: &Dataset, opts: RunOptions) -> Result<RunOutcome, EngineError> {
    cfg.validate()?;
    let start = Instant::now();
    let folds = stratified_kfold(&train.labels, cfg.k_folds, &mut stream_rng(cfg.seed, "folds", 0))?;
    let mut evaluator = Evaluator::new(train, folds, Duration::from_secs_f64(cfg.eval_budget));
    evaluator.hook = opts.step_hook.clone();
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| EngineError::InvalidConfig(format!("cannot start {} threads: {e}", cfg.threads)))?,
        )
    } else {
        None
    };
    let mut lp = Loop {
        cfg,
        evaluator,
        start,
        budget: Duration::from_secs_f64(cfg.budget),
        pool,
        observer: opts.observer.clone(),
        next_id: 0,
        evaluations: 0,
        timeouts: 0,
        failures: 0,
        best_ever: None,
    };
    let mut rng = stream_rng(cfg.seed, "engine", 0);
    let mut archive = Archive::new(cfg.arch_size, cfg.effective_div_weight());

    let mut pop = Vec::with_capacity(cfg.pop_size);
    for _ in 0..cfg.pop_size {
        let t = DerivationTree::random(g, cfg.max_der, &mut rng)?;
        let id = lp.fresh_id();
        pop.push(Individual::new(id, t, g));
    }
    let mut stats = GenStats { evaluations: 0, timeouts: 0, failures: 0 };
    let complete = lp.evaluate(&mut pop, &mut stats);
    archive.update(pop.iter().filter(|p| p.is_evaluated()));
    let initial = record(0, &pop, &archive, &stats);

    let mut generations = Vec::new();
    let mut generation_elapsed_s = Vec::new();
    let mut termination = if complete { Termination::Generations } else { Termination::Budget };
    if complete {
        for gen in 1..=cfg.max_gen {
            if lp.over_budget() {
                termination = Termination::Budget;
                break;
            }
            let parents = select_tournament(&pop, cfg.pop_size, &mut rng).expect("population is non-empty");
            let mut offspring = Vec::with_capacity(cfg.pop_size);
            let mut it = parents.into_iter();
            while let (Some(a), Some(b)) = (it.next(), it.next()) {
                if rng.random_bool(cfg.cx_prob) {
                    let (a, b) = if cfg.mode.specific_operators() && common_hparams(&a, &b).len() >= 2 {
                        cx_hparams(a, b, g, &mut rng)
                    } else {
                        cx_struct(a, b, g, cfg.max_der, &mut rng)
                    };
                    offspring.push(a);
                    offspring.push(b);
                } else {
                    offspring.push(a);
                    offspring.push(b);
                }
            }
            pop = offspring
                .into_iter()
                .map(|ind| {
                    if rng.random_bool(cfg.st_mut_prob) {
                        mut_struct(ind, g, cfg.max_der, &mut rng)
                    } else if cfg.mode.specific_operators() {
                        mut_hparams(ind, g, &mut rng)
                    } else {
                        ind
                    }
                })
                .collect();
            for ind in pop.iter_mut().filter(|p| !p.is_evaluated()) {
                ind.id = lp.fresh_id();
            }

            let mut stats = GenStats { evaluations: 0, timeouts: 0, failures: 0 };
            let complete = lp.evaluate(&mut pop, &mut stats);
            let incumbents: Vec<Individual> = archive.individuals().cloned().collect();
            archive.update(pop.iter().filter(|p| p.is_evaluated()).chain(incumbents.iter()));
            generations.push(record(gen, &pop, &archive, &stats));
            generation_elapsed_s.push(start.elapsed().as_secs_f64());
            if !complete {
                termination = Termination::Budget;
                break;
            }
        }
    }

    let report = RunReport {
        mode: cfg.mode,
        initial,
        generations,
        generation_elapsed_s,
        termination,
        evaluations: lp.evaluations,
        timeouts: lp.timeouts,
        failures: lp.failures,
        best_ever_fitness: lp.best_ever.as_ref().and_then(|b| b.fitness()).unwrap_or(0.0),
        best_ever_workflow: lp.best_ever.as_ref().map(|b| b.phenotype().to_string()),
        archive: archive
            .members()
            .iter()
            .map(|m| ArchiveSummary {
                id: m.individual.id,
                workflow: m.individual.phenotype().to_string(),
                fitness: m.fitness(),
                div: m.div,
                divfit: m.divfit,
            })
            .collect(),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { archive, best_ever: lp.best_ever, report })
}

/// The model a mode returns: the archive as a weighted ensemble, or the
/// fittest individual seen as a one-member ensemble.
pub fn final_ensemble(cfg: &EngineConfig, outcome: &RunOutcome, train: &Dataset) -> Result<Ensemble, EngineError> {
    match cfg.mode.output() {
        Output::Ensemble(weighting) => {
            if outcome.archive.is_empty() {
                return Err(EngineError::NoWorkflow);
            }
            Ok(build_ensemble(outcome.archive.individuals(), train, weighting, cfg.seed)?)
        }
        Output::BestSingle => {
            let best = outcome.best_ever.as_ref().ok_or(EngineError::NoWorkflow)?;
            Ok(build_ensemble([best], train, Weighting::FitnessRatio, cfg.seed)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Blobs;
    use std::sync::Mutex;

    fn small(max_gen: usize, seed: u64) -> EngineConfig {
        EngineConfig { max_gen, pop_size: 8, arch_size: 4, k_folds: 3, seed, budget: 600.0, eval_budget: 60.0, ..Default::default() }
    }

    fn data() -> Dataset {
        Blobs { n_samples: 60, n_classes: 3, n_noise: 2, radius: 3.0 }.generate(5)
    }

    fn observed(cfg: &EngineConfig, d: &Dataset) -> (RunOutcome, Vec<Individual>) {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        let observer: Observer = Arc::new(move |i: &Individual, _: &EvalResult| sink.lock().unwrap().push(i.clone()));
        let out = run_with(cfg, &Grammar::default_workflow(), d, RunOptions { step_hook: None, observer: Some(observer) })
            .unwrap();
        let seen = seen.lock().unwrap().clone();
        (out, seen)
    }

    #[test]
    fn zero_generations_archive_is_top_of_initial_population() {
        let cfg = small(0, 11);
        let (out, seen) = observed(&cfg, &data());
        assert_eq!(seen.len(), cfg.pop_size);
        assert!(out.report.generations.is_empty());

        let mut ranked: Vec<&Individual> = seen.iter().filter(|i| i.fitness().unwrap() > 0.0).collect();
        ranked.sort_by(|a, b| b.fitness().unwrap().total_cmp(&a.fitness().unwrap()).then(a.id.cmp(&b.id)));
        let mut want: Vec<u64> = Vec::new();
        let mut kept: Vec<&Individual> = Vec::new();
        for i in ranked {
            if kept.iter().any(|k| k.phenotype() == i.phenotype() && k.predictions() == i.predictions()) {
                continue;
            }
            kept.push(i);
            want.push(i.id);
        }
        want.truncate(cfg.arch_size);
        let mut got: Vec<u64> = out.archive.individuals().map(|i| i.id).collect();
        want.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn without_diversity_the_best_ever_survives() {
        for seed in 0..3 {
            let cfg = EngineConfig { div_weight: 0.0, ..small(3, seed) };
            let (out, seen) = observed(&cfg, &data());
            let best = seen.iter().map(|i| i.fitness().unwrap()).fold(0.0, f64::max);
            let top = out.archive.best().unwrap().fitness().unwrap();
            assert_eq!(top, best);
            assert_eq!(out.report.best_ever_fitness, best);
        }
    }

    #[test]
    fn tiny_budget_stops_with_a_well_formed_archive() {
        let cfg = EngineConfig { budget: 1e-9, eval_budget: 1e-9, ..small(5, 1) };
        let (out, seen) = observed(&cfg, &data());
        assert_eq!(out.report.termination, Termination::Budget);
        assert!(!seen.is_empty() && seen.len() <= cfg.pop_size);
        assert!(out.archive.len() <= cfg.arch_size);
        assert!(out.archive.members().windows(2).all(|w| w[0].divfit >= w[1].divfit));
    }

    #[test]
    fn same_seed_same_run() {
        let d = data();
        let a = run(&small(2, 4), &Grammar::default_workflow(), &d).unwrap();
        let b = run(&small(2, 4), &Grammar::default_workflow(), &d).unwrap();
        assert_eq!(a.report.generations, b.report.generations);
        assert_eq!(a.report.archive, b.report.archive);
    }

    #[test]
    fn threads_do_not_change_the_result() {
        let d = data();
        let a = run(&small(2, 9), &Grammar::default_workflow(), &d).unwrap();
        let b = run(&EngineConfig { threads: 3, ..small(2, 9) }, &Grammar::default_workflow(), &d).unwrap();
        assert_eq!(a.report.archive, b.report.archive);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            EngineConfig { pop_size: 7, ..Default::default() },
            EngineConfig { cx_prob: 1.5, ..Default::default() },
            EngineConfig { eval_budget: 10.0, budget: 5.0, ..Default::default() },
            EngineConfig { k_folds: 1, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(EngineError::InvalidConfig(_))));
        }
        assert!(EngineConfig::default().validate().is_ok());
    }

    #[test]
    fn mode_table() {
        assert!(Mode::Full.specific_operators() && Mode::Full.diverse_archive());
        assert!(!Mode::Basic.specific_operators() && !Mode::Basic.diverse_archive());
        assert_eq!(Mode::Top10.output(), Output::Ensemble(Weighting::Uniform));
        assert_eq!(Mode::OpOnly.output(), Output::BestSingle);
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        let cfg = EngineConfig { mode: Mode::Top10w, ..Default::default() };
        assert_eq!(cfg.effective_div_weight(), 0.0);
    }

    #[test]
    fn config_json_uses_table_names() {
        let json = serde_json::to_value(EngineConfig::default()).unwrap();
        for key in ["maxGen", "popSize", "cxProb", "stMutProb", "budget", "evalBudget", "maxDer", "archSize", "divWeight"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
