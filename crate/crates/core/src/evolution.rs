//! Regularized (aging) evolution over loss genomes, random search, and the
//! staged elimination protocol.
//!
//! Every random draw comes from a stream derived from the run seed and the
//! iteration or stage index, so a run can stop after any iteration and resume
//! from a checkpoint with identical results.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::augment::Pipeline;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::genome::{mutate_with, random_genome, GenomeHash, LossGenome, DEFAULT_LENGTH};
use crate::par::{map_ordered, Execution};
use crate::rng::{derive_seed, rng_from, tag};
use crate::trainer::{train_and_score, ModelKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub degenerate: bool,
}

impl Evaluation {
    pub const FAILED: Evaluation = Evaluation { fitness: 0.0, degenerate: true };
}

/// Scores a genome. Implementations must be deterministic in `(genome, seed)`.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: &LossGenome, seed: u64) -> Result<Evaluation>;

    /// Identifies everything besides the genome and seed that the score
    /// depends on; part of the cache key.
    fn context(&self) -> String;

    /// Evaluation with failures mapped to zero fitness.
    fn score(&self, genome: &LossGenome, seed: u64) -> Evaluation {
        match self.evaluate(genome, seed) {
            Ok(e) if e.fitness.is_finite() => e,
            Ok(_) => Evaluation::FAILED,
            Err(e) => {
                log::warn!("evaluation of {} failed: {e}", genome.canonical_hash());
                Evaluation::FAILED
            }
        }
    }
}

/// Deterministic stand-in landscapes for tests and dry runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockEvaluator {
    /// Number of active nodes, capped at the genome length.
    ActiveNodes,
    /// Canonical hash modulo 100.
    HashMod100,
}

impl Evaluator for MockEvaluator {
    fn evaluate(&self, g: &LossGenome, _seed: u64) -> Result<Evaluation> {
        let fitness = match self {
            Self::ActiveNodes => g.active_count().min(g.len()) as f64,
            Self::HashMod100 => (g.canonical_hash().0 % 100) as f64,
        };
        Ok(Evaluation { fitness, degenerate: false })
    }

    fn context(&self) -> String {
        format!("mock:{self:?}")
    }
}

/// Fitness = best validation accuracy of a surrogate training run.
pub struct TrainingEvaluator<'a> {
    pub dataset: &'a Dataset,
    pub model: ModelKind,
    pub pipeline: Pipeline,
    pub config: TrainConfig,
}

impl Evaluator for TrainingEvaluator<'_> {
    fn evaluate(&self, g: &LossGenome, seed: u64) -> Result<Evaluation> {
        let r = train_and_score(g, self.model, self.dataset, &self.pipeline, &self.config, seed)?;
        Ok(Evaluation { fitness: r.best_val_acc, degenerate: r.degenerate })
    }

    fn context(&self) -> String {
        format!(
            "train:{}:{:?}:{}:{:016x}",
            self.dataset.name,
            self.model,
            self.pipeline.technique,
            self.config.fingerprint()
        )
    }
}

/// Memoizes an evaluator by (canonical hash, context, seed).
pub struct CachedEvaluator<E> {
    inner: E,
    cache: Mutex<HashMap<(GenomeHash, u64), Evaluation>>,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&self, g: &LossGenome, seed: u64) -> Result<Evaluation> {
        let key = (g.canonical_hash(), seed);
        if let Some(e) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*e);
        }
        let e = self.inner.score(g, seed);
        self.cache.lock().expect("cache lock").insert(key, e);
        Ok(e)
    }

    fn context(&self) -> String {
        self.inner.context()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub tournament_size: usize,
    pub iterations: usize,
    pub random_pool_size: usize,
    pub genome_length: usize,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            tournament_size: 5,
            iterations: 200,
            random_pool_size: 200,
            genome_length: DEFAULT_LENGTH,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population_size == 0 {
            return bad("population_size must be positive".into());
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return bad(format!(
                "tournament_size {} must lie in 1..={}",
                self.tournament_size, self.population_size
            ));
        }
        if self.random_pool_size < self.population_size {
            return bad(format!(
                "random_pool_size {} is smaller than population_size {}",
                self.random_pool_size, self.population_size
            ));
        }
        if self.genome_length < 2 {
            return bad("genome_length must be at least 2".into());
        }
        Ok(())
    }

    /// Seed passed to the evaluator for every search-time evaluation.
    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag("evaluate")])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub genome: LossGenome,
    pub fitness: f64,
    pub degenerate: bool,
    /// Insertion counter; lower is older.
    pub born: u64,
}

/// Aging population: oldest at the front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: VecDeque<Member>,
    pub next_born: u64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Fittest member; ties go to the oldest.
    pub fn best(&self) -> Option<&Member> {
        self.members.iter().fold(None, |b: Option<&Member>, m| match b {
            Some(b) if b.fitness >= m.fitness => Some(b),
            _ => Some(m),
        })
    }

    fn push(&mut self, genome: LossGenome, e: Evaluation) {
        self.members.push_back(Member { genome, fitness: e.fitness, degenerate: e.degenerate, born: self.next_born });
        self.next_born += 1;
    }
}

/// One evaluated genome of the initial random pool.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub genome: LossGenome,
    pub evaluation: Evaluation,
}

pub fn random_pool(cfg: &EvolutionConfig, size: usize) -> Vec<LossGenome> {
    (0..size as u64)
        .map(|i| random_genome(derive_seed(cfg.seed, &[tag("pool"), i]), cfg.genome_length))
        .collect()
}

/// Generates and scores the random pool, then keeps the `P` fittest. Ties keep
/// generation order; founders are inserted in generation order.
pub fn seed_population(cfg: &EvolutionConfig, eval: &dyn Evaluator, exec: Execution) -> Result<(Population, Vec<PoolEntry>)> {
    cfg.validate()?;
    let pool = random_pool(cfg, cfg.random_pool_size);
    let seed = cfg.eval_seed();
    let scores = map_ordered(exec, &pool, |_, g| eval.score(g, seed));
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].fitness.total_cmp(&scores[a].fitness));
    let mut keep = order[..cfg.population_size].to_vec();
    keep.sort_unstable();
    let mut pop = Population { members: VecDeque::with_capacity(cfg.population_size), next_born: 0 };
    for &i in &keep {
        pop.push(pool[i].clone(), scores[i]);
    }
    let entries = pool.into_iter().zip(scores).map(|(genome, evaluation)| PoolEntry { genome, evaluation }).collect();
    Ok((pop, entries))
}

/// Run-ledger row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub parent_hash: GenomeHash,
    pub child_hash: GenomeHash,
    pub fitness: f64,
    pub degenerate: bool,
}

/// One regularized-evolution step: tournament of `T` distinct members (fittest
/// wins, older on ties), mutate the winner, evaluate, drop the oldest, append
/// the child.
pub fn evolve_step(pop: &mut Population, cfg: &EvolutionConfig, eval: &dyn Evaluator, iteration: usize) -> Result<StepRecord> {
    if pop.len() < cfg.tournament_size || pop.is_empty() {
        return Err(Error::Config(format!(
            "tournament of {} from a population of {}",
            cfg.tournament_size,
            pop.len()
        )));
    }
    let mut rng = rng_from(derive_seed(cfg.seed, &[tag("evolve"), iteration as u64]));
    let mut contenders = sample(&mut rng, pop.len(), cfg.tournament_size).into_vec();
    contenders.sort_unstable();
    let winner = contenders
        .iter()
        .map(|&i| &pop.members[i])
        .fold(None, |b: Option<&Member>, m| match b {
            Some(b) if b.fitness > m.fitness || (b.fitness == m.fitness && b.born < m.born) => Some(b),
            _ => Some(m),
        })
        .expect("non-empty tournament");
    let parent_hash = winner.genome.canonical_hash();
    let (child, _) = mutate_with(&winner.genome, &mut rng);
    let e = eval.score(&child, cfg.eval_seed());
    let rec = StepRecord { iteration, parent_hash, child_hash: child.canonical_hash(), fitness: e.fitness, degenerate: e.degenerate };
    pop.members.pop_front();
    pop.push(child, e);
    Ok(rec)
}

/// Persistable state of a search after `iteration` completed steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub config: EvolutionConfig,
    pub population: Population,
    /// Best fitness seen by the search so far, with its genome.
    pub best: Member,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format { file: path.display().to_string(), message: e.to_string() })
    }
}

/// Runs the remaining iterations of a search. `on_step` sees each ledger row
/// and the state after it, e.g. to append to a ledger or checkpoint.
pub fn run_search(
    mut state: Checkpoint,
    eval: &dyn Evaluator,
    stop_after: Option<usize>,
    mut on_step: impl FnMut(&StepRecord, &Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    let end = stop_after.map_or(state.config.iterations, |s| s.min(state.config.iterations));
    while state.iteration < end {
        let cfg = state.config.clone();
        let rec = evolve_step(&mut state.population, &cfg, eval, state.iteration + 1)?;
        state.iteration += 1;
        let newest = state.population.members.back().expect("child was inserted");
        if newest.fitness > state.best.fitness {
            state.best = newest.clone();
        }
        on_step(&rec, &state)?;
    }
    Ok(state)
}

/// Seeds a population and wraps it in an initial checkpoint.
pub fn start_search(cfg: &EvolutionConfig, eval: &dyn Evaluator, exec: Execution) -> Result<(Checkpoint, Vec<PoolEntry>)> {
    let (population, pool) = seed_population(cfg, eval, exec)?;
    let best = population.best().expect("population is non-empty").clone();
    Ok((Checkpoint { iteration: 0, config: cfg.clone(), population, best }, pool))
}

/// Best fitness among `budget` random genomes.
pub fn random_search(cfg: &EvolutionConfig, budget: usize, eval: &dyn Evaluator, exec: Execution) -> f64 {
    let mut c = cfg.clone();
    c.seed = derive_seed(cfg.seed, &[tag("random-search")]);
    let pool = random_pool(&c, budget);
    let seed = cfg.eval_seed();
    map_ordered(exec, &pool, |_, g| eval.score(g, seed).fitness).into_iter().fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// Survivors after this stage.
    pub keep: usize,
    /// Fresh evaluations per survivor in this stage.
    pub runs: usize,
    /// Rank by the mean of this many most recent scores; all when absent.
    pub window: Option<usize>,
}

/// Four stages keeping 24, 12, 6 and 3, one fresh run each; the last two rank
/// by the mean of the latest two and three runs.
pub fn default_stages() -> Vec<Stage> {
    [(24, 1), (12, 1), (6, 2), (3, 3)]
        .into_iter()
        .map(|(keep, window)| Stage { keep, runs: 1, window: Some(window) })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Survivor {
    pub genome: LossGenome,
    pub scores: Vec<f64>,
    pub rank_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Elimination {
    pub ranked: Vec<Survivor>,
    pub warnings: Vec<String>,
}

fn window_mean(scores: &[f64], window: Option<usize>) -> f64 {
    let w = window.unwrap_or(scores.len()).clamp(1, scores.len().max(1));
    let tail = &scores[scores.len().saturating_sub(w)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Staged elimination: each stage re-evaluates every survivor with fresh
/// seeds, ranks by the windowed mean of its scores (stable on ties), and keeps
/// the top `keep`. A `keep` larger than the field passes everyone with a warning.
pub fn eliminate(
    candidates: &[LossGenome],
    stages: &[Stage],
    eval: &dyn Evaluator,
    seed: u64,
    exec: Execution,
) -> Result<Elimination> {
    let mut field: Vec<Survivor> =
        candidates.iter().map(|g| Survivor { genome: g.clone(), scores: Vec::new(), rank_score: 0.0 }).collect();
    let mut warnings = Vec::new();
    for (si, stage) in stages.iter().enumerate() {
        if stage.keep == 0 {
            return Err(Error::Config(format!("stage {si} keeps no candidates")));
        }
        for run in 0..stage.runs {
            let s = derive_seed(seed, &[tag("eliminate"), si as u64, run as u64]);
            let scores = map_ordered(exec, &field, |_, c| eval.score(&c.genome, s).fitness);
            for (c, v) in field.iter_mut().zip(scores) {
                c.scores.push(v);
            }
        }
        for c in &mut field {
            c.rank_score = window_mean(&c.scores, stage.window);
        }
        field.sort_by(|a, b| b.rank_score.total_cmp(&a.rank_score));
        if stage.keep > field.len() {
            let w = format!("stage {si}: keep {} exceeds {} candidates; passing all through", stage.keep, field.len());
            log::warn!("{w}");
            warnings.push(w);
        }
        field.truncate(stage.keep);
    }
    Ok(Elimination { ranked: field, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> EvolutionConfig {
        EvolutionConfig { population_size: 5, tournament_size: 2, iterations: 20, random_pool_size: 20, seed, ..Default::default() }
    }

    #[test]
    fn pool_equal_to_population_keeps_everything() {
        let cfg = EvolutionConfig { random_pool_size: 5, ..small(1) };
        let (pop, pool) = seed_population(&cfg, &MockEvaluator::HashMod100, Execution::Sequential).unwrap();
        let kept: Vec<_> = pop.members.iter().map(|m| m.genome.clone()).collect();
        let all: Vec<_> = pool.into_iter().map(|p| p.genome).collect();
        assert_eq!(kept, all);
    }

    #[test]
    fn seeding_keeps_top_hashes() {
        let cfg = small(2);
        let (pop, _) = seed_population(&cfg, &MockEvaluator::HashMod100, Execution::Sequential).unwrap();
        let mut oracle: Vec<f64> =
            random_pool(&cfg, 20).iter().map(|g| (g.canonical_hash().0 % 100) as f64).collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        let mut got: Vec<f64> = pop.members.iter().map(|m| m.fitness).collect();
        got.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(got, oracle[..5]);
    }

    struct Broken;
    impl Evaluator for Broken {
        fn evaluate(&self, _: &LossGenome, _: u64) -> Result<Evaluation> {
            Err(Error::Config("no dataset".into()))
        }
        fn context(&self) -> String {
            "broken".into()
        }
    }

    #[test]
    fn failing_evaluator_gives_zero_fitness_population() {
        let (pop, _) = seed_population(&small(3), &Broken, Execution::Sequential).unwrap();
        assert_eq!(pop.len(), 5);
        assert!(pop.members.iter().all(|m| m.fitness == 0.0 && m.degenerate));
    }

    #[test]
    fn full_tournament_picks_global_best_and_ages_out_founders() {
        let cfg = EvolutionConfig { tournament_size: 5, ..small(4) };
        let (mut pop, _) = seed_population(&cfg, &MockEvaluator::HashMod100, Execution::Sequential).unwrap();
        let founders: Vec<u64> = pop.members.iter().map(|m| m.born).collect();
        let best = pop.best().unwrap().genome.canonical_hash();
        let rec = evolve_step(&mut pop, &cfg, &MockEvaluator::HashMod100, 1).unwrap();
        assert_eq!(rec.parent_hash, best);
        for it in 2..=5 {
            evolve_step(&mut pop, &cfg, &MockEvaluator::HashMod100, it).unwrap();
        }
        assert_eq!(pop.len(), 5);
        assert!(pop.members.iter().all(|m| !founders.contains(&m.born)));
    }

    #[test]
    fn best_member_can_be_evicted() {
        let cfg = small(5);
        let (mut pop, _) = seed_population(&cfg, &MockEvaluator::HashMod100, Execution::Sequential).unwrap();
        pop.members[0].fitness = 1e9;
        evolve_step(&mut pop, &cfg, &MockEvaluator::HashMod100, 1).unwrap();
        assert!(pop.members.iter().all(|m| m.fitness < 1e9));
    }

    #[test]
    fn best_fitness_never_decreases_on_the_active_node_landscape() {
        let cfg = EvolutionConfig { iterations: 200, ..small(6) };
        let (state, _) = start_search(&cfg, &MockEvaluator::ActiveNodes, Execution::Sequential).unwrap();
        let mut prev = state.best.fitness;
        run_search(state, &MockEvaluator::ActiveNodes, None, |_, s| {
            assert!(s.best.fitness >= prev);
            prev = s.best.fitness;
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn stopping_and_resuming_matches_an_uninterrupted_run() {
        let cfg = small(7);
        let eval = MockEvaluator::HashMod100;
        let (start, _) = start_search(&cfg, &eval, Execution::Sequential).unwrap();
        let mut full_log = Vec::new();
        let full = run_search(start.clone(), &eval, None, |r, _| {
            full_log.push(r.clone());
            Ok(())
        })
        .unwrap();
        let mut log = Vec::new();
        let half = run_search(start, &eval, Some(8), |r, _| {
            log.push(r.clone());
            Ok(())
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        half.save(&path).unwrap();
        let resumed = run_search(Checkpoint::load(&path).unwrap(), &eval, None, |r, _| {
            log.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(resumed, full);
        assert_eq!(log, full_log);
    }

    #[test]
    fn zero_budget_returns_seeded_population() {
        let cfg = EvolutionConfig { iterations: 0, ..small(8) };
        let (start, _) = start_search(&cfg, &MockEvaluator::HashMod100, Execution::Sequential).unwrap();
        let end = run_search(start.clone(), &MockEvaluator::HashMod100, None, |_, _| Ok(())).unwrap();
        assert_eq!(end, start);
    }

    /// Scores from a fixed table indexed by (genome position, call count).
    struct Table {
        rows: Vec<(GenomeHash, Vec<f64>)>,
        calls: Mutex<HashMap<GenomeHash, usize>>,
    }
    impl Evaluator for Table {
        fn evaluate(&self, g: &LossGenome, _: u64) -> Result<Evaluation> {
            let h = g.canonical_hash();
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(h).or_default();
            let row = &self.rows.iter().find(|r| r.0 == h).unwrap().1;
            let v = row[*n];
            *n += 1;
            Ok(Evaluation { fitness: v, degenerate: false })
        }
        fn context(&self) -> String {
            "table".into()
        }
    }

    #[test]
    fn elimination_follows_hand_computed_means() {
        let genomes: Vec<LossGenome> = (0..5).map(|s| random_genome(100 + s, 10)).collect();
        let table = [
            vec![0.9, 0.1, 0.1],
            vec![0.8, 0.8, 0.2],
            vec![0.7, 0.9, 0.9],
            vec![0.2, 0.2, 0.2],
            vec![0.6, 0.5, 0.4],
        ];
        let eval = Table {
            rows: genomes.iter().map(|g| g.canonical_hash()).zip(table.iter().cloned()).collect(),
            calls: Mutex::new(HashMap::new()),
        };
        let stages = [
            Stage { keep: 4, runs: 1, window: None },
            Stage { keep: 3, runs: 1, window: None },
            Stage { keep: 2, runs: 1, window: Some(2) },
        ];
        let out = eliminate(&genomes, &stages, &eval, 0, Execution::Sequential).unwrap();
        // Stage 1 drops genome 3 (0.2). Means after two runs: g0 0.5, g1 0.8, g2 0.8, g4 0.55 → drop g0.
        // Stage 3 window-2 means: g1 (0.8+0.2)/2=0.5, g2 0.9, g4 0.45.
        let order: Vec<_> = out.ranked.iter().map(|s| s.genome.clone()).collect();
        assert_eq!(order, vec![genomes[2].clone(), genomes[1].clone()]);
        assert_eq!(out.ranked[0].scores, vec![0.7, 0.9, 0.9]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn elimination_passes_through_small_fields() {
        let genomes: Vec<LossGenome> = (0..4).map(|s| random_genome(s, 10)).collect();
        let out = eliminate(&genomes, &default_stages(), &MockEvaluator::HashMod100, 0, Execution::Sequential).unwrap();
        assert_eq!(out.ranked.len(), 3);
        assert_eq!(out.warnings.len(), 3);
        let single = eliminate(&genomes, &[Stage { keep: 4, runs: 1, window: None }], &MockEvaluator::HashMod100, 0, Execution::Sequential)
            .unwrap();
        let mut expected: Vec<f64> = genomes.iter().map(|g| (g.canonical_hash().0 % 100) as f64).collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(single.ranked.iter().map(|s| s.rank_score).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn cache_avoids_repeat_work() {
        let cached = CachedEvaluator::new(MockEvaluator::ActiveNodes);
        let g = random_genome(1, 10);
        let a = cached.score(&g, 3);
        let b = cached.score(&g, 3);
        assert_eq!(a, b);
        assert_eq!(cached.len(), 1);
    }
}
