//! Predictor-guided evolutionary and random search under a strict query
//! budget.
//!
//! Ground truth is reachable only through [`Budget::query`], which pays for
//! each new architecture and logs it. Search code never holds a
//! [`GroundTruth`] directly.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archgraph::{ArchDag, BenchmarkDataset, OpVocab, SyntheticSpec, INPUT, OUTPUT};
use crate::predictor::{PredictorError, PredictorModel, TrainConfig};

/// Attempts per mutation before giving up.
pub const MUTATION_RETRIES: usize = 50;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("query budget of {0} exhausted")]
    Exhausted(usize),
    #[error("architecture {0} is not in the search space")]
    Unknown(String),
    #[error("no valid mutation found after {MUTATION_RETRIES} attempts")]
    NoMutation,
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("search space is empty")]
    EmptySpace,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

pub type Result<T> = std::result::Result<T, SearchError>;

/// One paid ground-truth answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Source of true performance. Implementations are handed to a [`Budget`];
/// search routines only see the budget.
pub trait GroundTruth: Sync {
    fn vocab(&self) -> &OpVocab;
    /// Whether `arch` belongs to the space. Free, since it reveals nothing
    /// about performance.
    fn contains(&self, arch: &ArchDag) -> bool;
    /// `n` distinct architectures drawn uniformly from the space.
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<ArchDag>;
    fn lookup(&self, arch: &ArchDag) -> Option<Observation>;
}

/// Tabular benchmark: only architectures present in the table exist.
pub struct TableTruth<'a> {
    ds: &'a BenchmarkDataset,
    index: HashMap<String, usize>,
}

impl<'a> TableTruth<'a> {
    pub fn new(ds: &'a BenchmarkDataset) -> Self {
        let index = ds
            .trainable()
            .map(|i| (ds.records[i].arch.key(), i))
            .collect();
        Self { ds, index }
    }
}

impl GroundTruth for TableTruth<'_> {
    fn vocab(&self) -> &OpVocab {
        &self.ds.vocab
    }

    fn contains(&self, arch: &ArchDag) -> bool {
        self.index.contains_key(&arch.key())
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<ArchDag> {
        let pool: Vec<usize> = self.ds.trainable().collect();
        sample(rng, pool.len(), n.min(pool.len()))
            .into_iter()
            .map(|i| self.ds.records[pool[i]].arch.clone())
            .collect()
    }

    fn lookup(&self, arch: &ArchDag) -> Option<Observation> {
        self.index.get(&arch.key()).map(|&i| {
            let r = &self.ds.records[i];
            Observation {
                id: r.id.clone(),
                val_acc: r.val_acc,
                test_acc: r.test_acc,
            }
        })
    }
}

/// Synthetic space: any valid architecture over the vocab can be scored by
/// the planted-motif oracle. Initial samples come from the generated table.
pub struct SynthTruth<'a> {
    spec: &'a SyntheticSpec,
    table: TableTruth<'a>,
}

impl<'a> SynthTruth<'a> {
    pub fn new(spec: &'a SyntheticSpec, ds: &'a BenchmarkDataset) -> Self {
        Self {
            spec,
            table: TableTruth::new(ds),
        }
    }
}

impl GroundTruth for SynthTruth<'_> {
    fn vocab(&self) -> &OpVocab {
        &self.spec.vocab
    }

    fn contains(&self, arch: &ArchDag) -> bool {
        arch.num_ops() == self.spec.vocab.len() && arch.num_nodes() <= self.spec.max_nodes && arch.is_valid()
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<ArchDag> {
        self.table.sample(n, rng)
    }

    fn lookup(&self, arch: &ArchDag) -> Option<Observation> {
        if let Some(o) = self.table.lookup(arch) {
            return Some(o);
        }
        if !self.contains(arch) {
            return None;
        }
        let acc = self.spec.accuracy(arch).ok()?;
        Some(Observation {
            id: arch.key(),
            val_acc: acc,
            test_acc: acc,
        })
    }
}

/// Query accountant. Repeat queries of a paid architecture are served from
/// the cache for free.
pub struct Budget<'a> {
    truth: &'a dyn GroundTruth,
    max: usize,
    audit: Vec<Observation>,
    cache: HashMap<String, usize>,
}

impl<'a> Budget<'a> {
    pub fn new(truth: &'a dyn GroundTruth, max: usize) -> Self {
        Self {
            truth,
            max,
            audit: Vec::new(),
            cache: HashMap::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn spent(&self) -> usize {
        self.audit.len()
    }

    pub fn remaining(&self) -> usize {
        self.max - self.spent()
    }

    /// Every paid query, in order.
    pub fn audit(&self) -> &[Observation] {
        &self.audit
    }

    pub fn vocab(&self) -> &OpVocab {
        self.truth.vocab()
    }

    pub fn contains(&self, arch: &ArchDag) -> bool {
        self.truth.contains(arch)
    }

    pub fn is_paid(&self, arch: &ArchDag) -> bool {
        self.cache.contains_key(&arch.key())
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<ArchDag> {
        self.truth.sample(n, rng)
    }

    pub fn query(&mut self, arch: &ArchDag) -> Result<Observation> {
        let key = arch.key();
        if let Some(&i) = self.cache.get(&key) {
            return Ok(self.audit[i].clone());
        }
        if self.spent() >= self.max {
            return Err(SearchError::Exhausted(self.max));
        }
        let obs = self.truth.lookup(arch).ok_or(SearchError::Unknown(key.clone()))?;
        self.cache.insert(key, self.audit.len());
        self.audit.push(obs.clone());
        Ok(obs)
    }
}

/// Anything that can rank candidate architectures from paid observations.
pub trait Scorer {
    fn fit(&mut self, data: &[(&ArchDag, f64)]) -> Result<()>;
    fn score(&self, archs: &[&ArchDag]) -> Result<Vec<f64>>;
}

/// The CARL predictor as a search scorer. The first fit trains from the
/// initial parameters; later fits warm-start with `refit_epochs`.
pub struct CarlScorer {
    pub model: PredictorModel,
    pub train: TrainConfig,
    pub refit_epochs: usize,
    fits: usize,
}

impl CarlScorer {
    pub fn new(model: PredictorModel, train: TrainConfig, refit_epochs: usize) -> Self {
        Self {
            model,
            train,
            refit_epochs,
            fits: 0,
        }
    }
}

impl Scorer for CarlScorer {
    fn fit(&mut self, data: &[(&ArchDag, f64)]) -> Result<()> {
        let mut cfg = self.train;
        if self.fits > 0 {
            cfg.epochs = self.refit_epochs;
        }
        cfg.seed = self.train.seed.wrapping_add(self.fits as u64);
        self.model.fit(data, &cfg)?;
        self.fits += 1;
        Ok(())
    }

    fn score(&self, archs: &[&ArchDag]) -> Result<Vec<f64>> {
        self.model.predict(archs).map_err(|e| PredictorError::from(e).into())
    }
}

/// Wraps a fixed scoring function, e.g. a noiseless oracle in tests.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&ArchDag) -> f64> Scorer for FnScorer<F> {
    fn fit(&mut self, _: &[(&ArchDag, f64)]) -> Result<()> {
        Ok(())
    }

    fn score(&self, archs: &[&ArchDag]) -> Result<Vec<f64>> {
        Ok(archs.iter().map(|a| (self.0)(a)).collect())
    }
}

/// One random atomic edit (relabel a body node, add an edge or remove an
/// edge) that yields a different valid architecture.
pub fn mutate(arch: &ArchDag, vocab: &OpVocab, rng: &mut impl Rng) -> Result<ArchDag> {
    let n = arch.num_nodes();
    let body: Vec<usize> = (0..n).filter(|&i| arch.op(i) != INPUT && arch.op(i) != OUTPUT).collect();
    let ops = vocab.body_ops();
    for _ in 0..MUTATION_RETRIES {
        let mut next = arch.clone();
        match rng.random_range(0..3) {
            0 => {
                if body.is_empty() || ops.len() < 2 {
                    continue;
                }
                let i = body[rng.random_range(0..body.len())];
                let mut op = rng.random_range(ops.start..ops.end - 1);
                if op >= arch.op(i) {
                    op += 1;
                }
                next.set_op(i, op);
            }
            kind => {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                if i == j || arch.has_edge(i, j) == (kind == 1) {
                    continue;
                }
                next.set_edge(i, j, kind == 1);
            }
        }
        if next.is_valid() {
            return Ok(next);
        }
    }
    Err(SearchError::NoMutation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// Random architectures queried before the predictor is first trained.
    pub n0: usize,
    /// Total ground-truth queries.
    pub budget: usize,
    /// Tournament pool: the `population` most recent queries.
    pub population: usize,
    /// Tournament size as a fraction of the pool, at least `min_tournament`.
    pub tournament_frac: f64,
    pub min_tournament: usize,
    /// Mutants ranked by the predictor per query.
    pub candidates: usize,
    /// Retrain after this many new queries; 0 disables retraining.
    pub retrain_every: usize,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            n0: 30,
            budget: 80,
            population: 50,
            tournament_frac: 0.1,
            min_tournament: 2,
            candidates: 100,
            retrain_every: 10,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SearchError::Config(m));
        if self.n0 == 0 || self.n0 > self.budget {
            return bad(format!("need 1 <= n0 <= budget, got n0 = {} and budget = {}", self.n0, self.budget));
        }
        if self.population < self.min_tournament.max(1) {
            return bad(format!("population {} smaller than the tournament", self.population));
        }
        if !(self.tournament_frac > 0.0 && self.tournament_frac <= 1.0) {
            return bad(format!("tournament_frac must be in (0, 1], got {}", self.tournament_frac));
        }
        if self.candidates == 0 {
            return bad("candidates must be positive".into());
        }
        Ok(())
    }

    fn tournament(&self, pool: usize) -> usize {
        ((self.tournament_frac * pool as f64).ceil() as usize)
            .max(self.min_tournament)
            .min(pool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 0 for the initial random queries, then one round per guided query.
    pub round: usize,
    pub id: String,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Best validation accuracy so far.
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub rows: Vec<TraceRow>,
    /// Architecture with the best validation accuracy among all queries.
    pub best: ArchDag,
    pub best_obs: Observation,
}

impl SearchTrace {
    fn from_queries(queried: &[(ArchDag, Observation, usize)]) -> Self {
        let mut rows = Vec::with_capacity(queried.len());
        let mut best = 0;
        for (k, (_, obs, round)) in queried.iter().enumerate() {
            if obs.val_acc > queried[best].1.val_acc {
                best = k;
            }
            rows.push(TraceRow {
                round: *round,
                id: obs.id.clone(),
                val_acc: obs.val_acc,
                test_acc: obs.test_acc,
                best_so_far: queried[best].1.val_acc,
            });
        }
        Self {
            rows,
            best: queried[best].0.clone(),
            best_obs: queried[best].1.clone(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far)
    }

    /// Tab-separated rows: round, id, val, test, best-so-far.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("round\tid\tval_acc\ttest_acc\tbest_so_far\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.round, r.id, r.val_acc, r.test_acc, r.best_so_far
            ));
        }
        s
    }
}

fn fit_on(scorer: &mut dyn Scorer, queried: &[(ArchDag, Observation, usize)]) -> Result<()> {
    let data: Vec<(&ArchDag, f64)> = queried.iter().map(|(a, o, _)| (a, o.val_acc)).collect();
    scorer.fit(&data)
}

/// Predictor-guided regularized evolution. Queries `n0` random
/// architectures, trains the scorer, then repeatedly mutates tournament
/// winners, ranks the mutants with the scorer and pays for the top one.
pub fn evolve(budget: &mut Budget, scorer: &mut dyn Scorer, cfg: &EvolutionConfig) -> Result<SearchTrace> {
    cfg.validate()?;
    if budget.remaining() < cfg.n0 {
        return Err(SearchError::Config(format!(
            "n0 = {} exceeds the remaining budget {}",
            cfg.n0,
            budget.remaining()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut queried: Vec<(ArchDag, Observation, usize)> = Vec::new();
    let init = budget.sample(cfg.n0, &mut rng);
    if init.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    for arch in init {
        let obs = budget.query(&arch)?;
        queried.push((arch, obs, 0));
    }
    let target = (budget.spent() - queried.len() + cfg.budget).min(budget.max());
    fit_on(scorer, &queried)?;
    let mut since_fit = 0;
    let mut round = 0;
    let vocab = budget.vocab().clone();

    while budget.spent() < target {
        round += 1;
        let pool_start = queried.len().saturating_sub(cfg.population);
        let pool = &queried[pool_start..];
        let t = cfg.tournament(pool.len());

        let mut seen: HashSet<String> = HashSet::new();
        let mut cands: Vec<ArchDag> = Vec::new();
        for _ in 0..cfg.candidates * 4 {
            if cands.len() >= cfg.candidates {
                break;
            }
            let parent = sample(&mut rng, pool.len(), t)
                .into_iter()
                .map(|i| &pool[i])
                .max_by(|a, b| a.1.val_acc.total_cmp(&b.1.val_acc))
                .expect("non-empty tournament");
            let Ok(child) = mutate(&parent.0, &vocab, &mut rng) else {
                continue;
            };
            if budget.contains(&child) && !budget.is_paid(&child) && seen.insert(child.key()) {
                cands.push(child);
            }
        }
        if cands.is_empty() {
            // the neighbourhood is exhausted; fall back to a random unpaid arch
            cands = budget
                .sample(cfg.candidates, &mut rng)
                .into_iter()
                .filter(|a| !budget.is_paid(a))
                .collect();
            if cands.is_empty() {
                break;
            }
        }

        let refs: Vec<&ArchDag> = cands.iter().collect();
        let scores = scorer.score(&refs)?;
        let best = (0..cands.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
            .expect("non-empty candidates");
        let arch = cands.swap_remove(best);
        let obs = match budget.query(&arch) {
            Ok(o) => o,
            Err(SearchError::Exhausted(_)) => break,
            Err(e) => return Err(e),
        };
        queried.push((arch, obs, round));
        since_fit += 1;
        if cfg.retrain_every > 0 && since_fit >= cfg.retrain_every && budget.spent() < target {
            fit_on(scorer, &queried)?;
            since_fit = 0;
        }
    }
    Ok(SearchTrace::from_queries(&queried))
}

/// Samples `sample_size` architectures, scores all of them and pays for the
/// top `queries` (capped by the remaining budget).
pub fn random_search(
    budget: &mut Budget,
    scorer: &dyn Scorer,
    sample_size: usize,
    queries: usize,
    seed: u64,
) -> Result<SearchTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = budget.sample(sample_size, &mut rng);
    if pool.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    let refs: Vec<&ArchDag> = pool.iter().collect();
    let scores = scorer.score(&refs)?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let take = queries.max(1).min(budget.remaining()).min(pool.len());
    if take == 0 {
        return Err(SearchError::Exhausted(budget.max()));
    }
    let mut queried = Vec::with_capacity(take);
    for &i in &order[..take] {
        let obs = budget.query(&pool[i])?;
        queried.push((pool[i].clone(), obs, 1));
    }
    Ok(SearchTrace::from_queries(&queried))
}

/// Random search driven by a predictor trained on `n0` random queries:
/// the rest of the budget goes to the top-predicted architectures of a
/// fresh sample of `sample_size`.
pub fn guided_random_search(
    budget: &mut Budget,
    scorer: &mut dyn Scorer,
    n0: usize,
    sample_size: usize,
    seed: u64,
) -> Result<SearchTrace> {
    if n0 == 0 || n0 > budget.remaining() {
        return Err(SearchError::Config(format!(
            "need 1 <= n0 <= remaining budget {}, got {n0}",
            budget.remaining()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queried = Vec::new();
    for arch in budget.sample(n0, &mut rng) {
        let obs = budget.query(&arch)?;
        queried.push((arch, obs, 0));
    }
    if queried.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    if budget.remaining() > 0 {
        fit_on(scorer, &queried)?;
        let pool: Vec<ArchDag> = budget
            .sample(sample_size, &mut rng)
            .into_iter()
            .filter(|a| !budget.is_paid(a))
            .collect();
        let refs: Vec<&ArchDag> = pool.iter().collect();
        let scores = scorer.score(&refs)?;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for &i in order.iter().take(budget.remaining()) {
            let obs = budget.query(&pool[i])?;
            queried.push((pool[i].clone(), obs, 1));
        }
    }
    Ok(SearchTrace::from_queries(&queried))
}
