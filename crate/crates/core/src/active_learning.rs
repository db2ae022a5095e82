//! Budgeted open-set active learning.
//!
//! Each step scores every remaining pool member against the current labelled
//! set, queries the oracle for the best one, appends it to the labelled set
//! and removes it from the pool. The default score is the unlabelled to
//! labelled density ratio (ULDR):
//!
//! ```text
//! r(i) = sum_{j != i} exp(-|u_i - u_j|^2 / 2 sigma^2) / sum_k exp(-|u_i - c_k|^2 / 2 sigma^2)
//! ```
//!
//! computed as `ln r` so that neither sum has to be representable.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    check_dim, k_smallest, squared_distance, DatasetSplit, Label, LabeledEmbedding, LabeledSet,
    UnlabeledPool,
};
use crate::error::{Error, Result};
use crate::evaluation::{closed_accuracy, Accuracy};
use crate::kernel::{posterior_from_sq_distances, KernelParams, NeighborLimit};
use crate::math::logsumexp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Largest unlabelled to labelled density ratio.
    Uldr,
    /// Uniform draw from the remaining pool.
    Random,
    /// Furthest nearest labelled neighbour.
    Fnn,
    /// Smallest maximum class probability.
    Kde,
    /// Largest posterior entropy.
    Entropy,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Uldr,
        StrategyKind::Random,
        StrategyKind::Fnn,
        StrategyKind::Kde,
        StrategyKind::Entropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Uldr => "uldr",
            StrategyKind::Random => "random",
            StrategyKind::Fnn => "fnn",
            StrategyKind::Kde => "kde",
            StrategyKind::Entropy => "entropy",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown query strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStrategy {
    pub kind: StrategyKind,
    /// Seed of the random stream (only the `random` strategy draws from it).
    pub seed: u64,
}

impl QueryStrategy {
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlConfig {
    /// Number of oracle queries.
    pub budget: usize,
    pub strategy: QueryStrategy,
    pub params: KernelParams,
    /// Also snapshot every `eval_every` queries.
    pub eval_every: Option<usize>,
    /// Query counts after which to snapshot test accuracy. The final step is
    /// always snapshotted; `0` snapshots the initial state.
    pub snapshot_at: Vec<usize>,
}

impl AlConfig {
    pub fn new(budget: usize, strategy: QueryStrategy, params: KernelParams) -> Self {
        Self {
            budget,
            strategy,
            params,
            eval_every: None,
            snapshot_at: Vec::new(),
        }
    }

    fn snapshot_steps(&self) -> BTreeSet<usize> {
        let mut steps: BTreeSet<usize> = self
            .snapshot_at
            .iter()
            .copied()
            .filter(|&s| s <= self.budget)
            .collect();
        if let Some(every) = self.eval_every.filter(|&e| e > 0) {
            steps.extend((every..=self.budget).step_by(every));
        }
        steps.insert(self.budget);
        steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based query number.
    pub step: usize,
    pub id: String,
    /// Selection score (`ln r` for ULDR, 0 for random).
    pub score: f64,
    pub label: Label,
    pub was_novel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Number of queries answered when the snapshot was taken.
    pub step: usize,
    pub novel_acc: f64,
    pub combined_acc: f64,
    /// The test set had no novel-class members, so `novel_acc` is a placeholder 0.
    pub novel_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlTrace {
    pub steps: Vec<TraceStep>,
    pub snapshots: Vec<Snapshot>,
}

impl AlTrace {
    pub fn queried_ids(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.id.as_str())
    }
}

/// Source of ground-truth labels for queried pool members.
pub trait LabelOracle {
    fn answer(&mut self, id: &str) -> Result<Label>;
}

/// Answers from the pool's hidden truth; each id may be asked once.
#[derive(Debug)]
pub struct SimulatedOracle<'a> {
    pool: &'a UnlabeledPool,
    index: HashMap<&'a str, usize>,
    consumed: HashSet<usize>,
}

impl<'a> SimulatedOracle<'a> {
    pub fn new(pool: &'a UnlabeledPool) -> Self {
        let index = pool
            .members()
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id(), i))
            .collect();
        Self {
            pool,
            index,
            consumed: HashSet::new(),
        }
    }

    pub fn oracle_answer(&mut self, id: &str) -> Result<Label> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_owned()))?;
        if !self.consumed.insert(i) {
            return Err(Error::RepeatedQuery(id.to_owned()));
        }
        Ok(self.pool.hidden_truth()[i].label)
    }
}

impl LabelOracle for SimulatedOracle<'_> {
    fn answer(&mut self, id: &str) -> Result<Label> {
        self.oracle_answer(id)
    }
}

/// `ln r` from squared distances to the other unlabelled points and to the
/// labelled centres. An empty numerator gives `-inf`.
fn uldr_log_ratio(
    mut unlabeled_d2: Vec<f64>,
    labeled_d2: &[f64],
    params: &KernelParams,
) -> Result<f64> {
    let scale = params.log_kernel_scale();
    let n_den = params.support_size(labeled_d2.len())?;
    if n_den == 0 {
        return Err(Error::Empty("labeled set"));
    }
    if let NeighborLimit::Nearest(n) = params.neighbor_limit {
        unlabeled_d2.sort_by(f64::total_cmp);
        unlabeled_d2.truncate(n);
    }
    let numerator = logsumexp(unlabeled_d2.iter().map(|d| d * scale));
    let denominator = if n_den == labeled_d2.len() {
        logsumexp(labeled_d2.iter().map(|d| d * scale))
    } else {
        let keyed = labeled_d2.iter().copied().zip(0..).collect();
        logsumexp(k_smallest(keyed, n_den).into_iter().map(|(d, _)| d * scale))
    };
    Ok(numerator - denominator)
}

/// `ln ULDR` of pool member `i` against every other pool member and `centers`.
pub fn uldr_score(
    i: usize,
    pool: &UnlabeledPool,
    centers: &LabeledSet,
    params: &KernelParams,
) -> Result<f64> {
    params.validate()?;
    if centers.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    let x = pool
        .get(i)
        .ok_or_else(|| Error::invalid(format!("pool index {i} out of range")))?
        .vector();
    check_dim(centers.dim(), x.len())?;
    let unlabeled = pool
        .members()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, u)| squared_distance(x, u.vector()))
        .collect();
    let labeled: Vec<f64> = centers
        .members()
        .iter()
        .map(|c| squared_distance(x, c.as_ref()))
        .collect();
    uldr_log_ratio(unlabeled, &labeled, params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// Index into the pool.
    pub index: usize,
    pub score: f64,
}

/// Cached squared distances from every member of one pool to the labelled
/// centres (and, for ULDR, to each other). Centres only get appended.
struct DistanceCache<'a> {
    pool: &'a UnlabeledPool,
    params: KernelParams,
    to_centers: Vec<Vec<f64>>,
    center_labels: Vec<Label>,
    /// Row-major `pool x pool` squared distances.
    pairs: Option<Vec<f64>>,
}

impl<'a> DistanceCache<'a> {
    fn new(
        pool: &'a UnlabeledPool,
        centers: &LabeledSet,
        params: KernelParams,
        with_pairs: bool,
    ) -> Self {
        let to_centers = pool
            .members()
            .par_iter()
            .map(|u| {
                centers
                    .members()
                    .iter()
                    .map(|c| squared_distance(u.vector(), c.as_ref()))
                    .collect()
            })
            .collect();
        let pairs = with_pairs.then(|| {
            let n = pool.len();
            (0..n * n)
                .into_par_iter()
                .map(|ij| {
                    squared_distance(
                        pool.members()[ij / n].vector(),
                        pool.members()[ij % n].vector(),
                    )
                })
                .collect()
        });
        Self {
            pool,
            params,
            to_centers,
            center_labels: centers.labels().collect(),
            pairs,
        }
    }

    fn push_center(&mut self, x: &[f64], label: Label) {
        self.to_centers
            .par_iter_mut()
            .zip(self.pool.members().par_iter())
            .for_each(|(row, u)| row.push(squared_distance(u.vector(), x)));
        self.center_labels.push(label);
    }

    fn predict(&self, i: usize) -> Result<Label> {
        Ok(
            posterior_from_sq_distances(&self.to_centers[i], &self.center_labels, &self.params)?
                .argmax()
                .0,
        )
    }

    fn score(&self, i: usize, remaining: &[usize], kind: StrategyKind) -> Result<f64> {
        let row = &self.to_centers[i];
        match kind {
            StrategyKind::Random => Ok(0.0),
            StrategyKind::Fnn => Ok(row.iter().copied().fold(f64::INFINITY, f64::min).sqrt()),
            StrategyKind::Kde => {
                Ok(
                    posterior_from_sq_distances(row, &self.center_labels, &self.params)?
                        .max_complement(),
                )
            }
            StrategyKind::Entropy => {
                Ok(posterior_from_sq_distances(row, &self.center_labels, &self.params)?.entropy())
            }
            StrategyKind::Uldr => {
                let n = self.pool.len();
                let unlabeled = remaining
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| match &self.pairs {
                        Some(p) => p[i * n + j],
                        None => squared_distance(
                            self.pool.members()[i].vector(),
                            self.pool.members()[j].vector(),
                        ),
                    })
                    .collect();
                uldr_log_ratio(unlabeled, row, &self.params)
            }
        }
    }

    /// Best remaining member; `remaining` must be ascending so the first
    /// maximum is the smallest pool index.
    fn select<R: Rng>(
        &self,
        remaining: &[usize],
        strategy: &QueryStrategy,
        rng: &mut R,
    ) -> Result<Selection> {
        if remaining.is_empty() {
            return Err(Error::Empty("unlabeled pool"));
        }
        if self.center_labels.is_empty() {
            return Err(Error::Empty("labeled set"));
        }
        if strategy.kind == StrategyKind::Random {
            let pick = rng.random_range(0..remaining.len());
            return Ok(Selection {
                index: remaining[pick],
                score: 0.0,
            });
        }
        let scores: Vec<f64> = remaining
            .par_iter()
            .map(|&i| self.score(i, remaining, strategy.kind))
            .collect::<Result<_>>()?;
        let mut best = Selection {
            index: remaining[0],
            score: scores[0],
        };
        for (&i, &s) in remaining.iter().zip(&scores).skip(1) {
            if s > best.score {
                best = Selection { index: i, score: s };
            }
        }
        if best.score.is_nan() {
            return Err(Error::Invariant("selection score is NaN".into()));
        }
        Ok(best)
    }
}

/// Selects the next query among the pool members listed in `remaining`
/// (ascending pool indices). Argmax ties go to the smallest pool index.
pub fn select_query<R: Rng>(
    pool: &UnlabeledPool,
    remaining: &[usize],
    centers: &LabeledSet,
    strategy: &QueryStrategy,
    params: &KernelParams,
    rng: &mut R,
) -> Result<Selection> {
    params.validate()?;
    if centers.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    check_dim(centers.dim(), pool.dim())?;
    if remaining.windows(2).any(|w| w[0] >= w[1])
        || remaining.last().is_some_and(|&i| i >= pool.len())
    {
        return Err(Error::invalid(
            "remaining indices must be ascending and within the pool",
        ));
    }
    let cache = DistanceCache::new(pool, centers, *params, false);
    cache.select(remaining, strategy, rng)
}

#[derive(Debug, Clone)]
pub struct AlRun {
    pub trace: AlTrace,
    /// Initial training centres followed by every queried member, in query order.
    pub labeled: LabeledSet,
    /// Pool indices that were never queried, ascending.
    pub remaining: Vec<usize>,
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct AlAborted {
    pub partial: AlRun,
    pub error: Error,
}

impl fmt::Display for AlAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "active learning aborted after {} queries: {}",
            self.partial.trace.steps.len(),
            self.error
        )
    }
}

impl std::error::Error for AlAborted {}

/// Evaluates closed-set accuracy of the current centres on a test pool.
fn snapshot(
    step: usize,
    cache: &DistanceCache<'_>,
    test: &UnlabeledPool,
    vocabulary: &BTreeSet<Label>,
) -> Result<Snapshot> {
    let predicted: Vec<Label> = (0..test.len())
        .into_par_iter()
        .map(|i| cache.predict(i))
        .collect::<Result<_>>()?;
    let pairs: Vec<(Label, Label)> = predicted
        .iter()
        .zip(test.hidden_truth())
        .map(|(&p, t)| (p, t.label))
        .collect();
    let novel_pairs: Vec<(Label, Label)> = pairs
        .iter()
        .zip(test.hidden_truth())
        .filter(|(_, t)| t.is_novel)
        .map(|(p, _)| *p)
        .collect();
    let combined: Accuracy = closed_accuracy(&pairs, vocabulary)?;
    let novel: Accuracy = closed_accuracy(&novel_pairs, vocabulary)?;
    Ok(Snapshot {
        step,
        novel_acc: novel.value,
        combined_acc: combined.value,
        novel_degenerate: novel.degenerate,
    })
}

/// Runs budgeted query selection over `split.observed`, starting from
/// `split.train`, and snapshots test accuracy at the configured steps.
pub fn run_active_learning(
    split: &DatasetSplit,
    cfg: &AlConfig,
    oracle: &mut dyn LabelOracle,
) -> std::result::Result<AlRun, Box<AlAborted>> {
    let mut run = AlRun {
        trace: AlTrace::default(),
        labeled: split.train.clone(),
        remaining: (0..split.observed.len()).collect(),
    };
    match drive(split, cfg, oracle, &mut run) {
        Ok(()) => Ok(run),
        Err(error) => Err(Box::new(AlAborted {
            partial: run,
            error,
        })),
    }
}

fn drive(
    split: &DatasetSplit,
    cfg: &AlConfig,
    oracle: &mut dyn LabelOracle,
    run: &mut AlRun,
) -> Result<()> {
    cfg.params.validate()?;
    let pool = &split.observed;
    if cfg.budget > pool.len() {
        return Err(Error::invalid(format!(
            "budget {} exceeds observed pool size {}",
            cfg.budget,
            pool.len()
        )));
    }
    if run.labeled.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    if cfg.budget > 0 {
        check_dim(run.labeled.dim(), pool.dim())?;
    }

    let snapshot_steps = cfg.snapshot_steps();
    let mut vocabulary = split.vocabulary();
    vocabulary.extend(run.labeled.classes());
    let mut tests = (!split.test.is_empty())
        .then(|| DistanceCache::new(&split.test, &run.labeled, cfg.params, false));
    let mut cache = DistanceCache::new(
        pool,
        &run.labeled,
        cfg.params,
        cfg.strategy.kind == StrategyKind::Uldr,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.strategy.seed);

    let take_snapshot =
        |step: usize, tests: &Option<DistanceCache<'_>>, trace: &mut AlTrace| -> Result<()> {
            if let Some(t) = tests.as_ref().filter(|_| snapshot_steps.contains(&step)) {
                trace
                    .snapshots
                    .push(snapshot(step, t, &split.test, &vocabulary)?);
            }
            Ok(())
        };
    take_snapshot(0, &tests, &mut run.trace)?;

    for step in 1..=cfg.budget {
        let choice = cache.select(&run.remaining, &cfg.strategy, &mut rng)?;
        let member = &pool.members()[choice.index];
        let label = oracle.answer(member.id())?;
        run.labeled
            .push(LabeledEmbedding::new(member.clone(), label))?;
        cache.push_center(member.vector(), label);
        if let Some(t) = tests.as_mut() {
            t.push_center(member.vector(), label);
        }
        let pos = run
            .remaining
            .binary_search(&choice.index)
            .map_err(|_| Error::Invariant("selected member is not in the remaining pool".into()))?;
        run.remaining.remove(pos);
        run.trace.steps.push(TraceStep {
            step,
            id: member.id().to_owned(),
            score: choice.score,
            label,
            was_novel: !split.known_classes.contains(&label),
        });
        take_snapshot(step, &tests, &mut run.trace)?;
    }
    Ok(())
}
