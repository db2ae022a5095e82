//! Embedding data model, exact nearest-neighbour search and the known/novel
//! split protocol.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class identifier.
pub type Label = u32;

/// A point in the embedding space together with an opaque identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    id: String,
    vector: Vec<f64>,
}

impl Embedding {
    /// Builds an embedding, rejecting empty vectors and non-finite coordinates.
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if vector.is_empty() {
            return Err(Error::Empty("embedding vector"));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding `{id}`")));
        }
        Ok(Self { id, vector })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbedding {
    pub embedding: Embedding,
    pub label: Label,
}

impl LabeledEmbedding {
    pub fn new(embedding: Embedding, label: Label) -> Self {
        Self { embedding, label }
    }
}

impl AsRef<[f64]> for LabeledEmbedding {
    fn as_ref(&self) -> &[f64] {
        self.embedding.vector()
    }
}

/// The set of labelled kernel centres.
///
/// Members keep insertion order; ids are unique and every member shares the
/// same dimension. The set only grows (see [`LabeledSet::push`]).
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    members: Vec<LabeledEmbedding>,
    dim: usize,
    classes: BTreeSet<Label>,
    index: HashMap<String, usize>,
}

impl LabeledSet {
    /// An empty set that will accept members of dimension `dim`.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn from_members(members: Vec<LabeledEmbedding>) -> Result<Self> {
        let dim = members
            .first()
            .map(|m| m.embedding.dim())
            .ok_or(Error::Empty("labeled set"))?;
        let mut set = Self::with_dim(dim);
        set.members.reserve(members.len());
        for m in members {
            set.push(m)?;
        }
        Ok(set)
    }

    /// Appends a member. Fails on dimension mismatch or duplicate id.
    pub fn push(&mut self, item: LabeledEmbedding) -> Result<()> {
        if self.dim == 0 {
            self.dim = item.embedding.dim();
        }
        if item.embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: item.embedding.dim(),
            });
        }
        if self.index.contains_key(item.embedding.id()) {
            return Err(Error::DuplicateId(item.embedding.id().to_owned()));
        }
        self.index
            .insert(item.embedding.id().to_owned(), self.members.len());
        self.classes.insert(item.label);
        self.members.push(item);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &BTreeSet<Label> {
        &self.classes
    }

    pub fn members(&self) -> &[LabeledEmbedding] {
        &self.members
    }

    pub fn get(&self, i: usize) -> Option<&LabeledEmbedding> {
        self.members.get(i)
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.embedding.id())
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.members.iter().map(|m| m.label)
    }
}

/// Ground truth of a pool member. Only the oracle and the evaluator read it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub label: Label,
    pub is_novel: bool,
}

/// Unlabelled observations with their hidden ground truth.
#[derive(Debug, Clone, Default)]
pub struct UnlabeledPool {
    members: Vec<Embedding>,
    truth: Vec<Truth>,
    dim: usize,
}

impl UnlabeledPool {
    /// Builds a pool from `(embedding, true label)` pairs. A member is novel
    /// iff its label is outside `known`.
    pub fn new(members: Vec<(Embedding, Label)>, known: &BTreeSet<Label>) -> Result<Self> {
        let dim = members
            .first()
            .map(|(e, _)| e.dim())
            .ok_or(Error::Empty("unlabeled pool"))?;
        let mut seen = HashSet::with_capacity(members.len());
        let mut pool = Self {
            members: Vec::with_capacity(members.len()),
            truth: Vec::with_capacity(members.len()),
            dim,
        };
        for (e, label) in members {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.dim(),
                });
            }
            if !seen.insert(e.id().to_owned()) {
                return Err(Error::DuplicateId(e.id().to_owned()));
            }
            pool.truth.push(Truth {
                label,
                is_novel: !known.contains(&label),
            });
            pool.members.push(e);
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[Embedding] {
        &self.members
    }

    pub fn get(&self, i: usize) -> Option<&Embedding> {
        self.members.get(i)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.members.iter().position(|m| m.id() == id)
    }

    /// Hidden ground truth, index-aligned with [`UnlabeledPool::members`].
    pub fn hidden_truth(&self) -> &[Truth] {
        &self.truth
    }
}

/// Train / observed / test partition with disjoint known and novel classes.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: LabeledSet,
    pub observed: UnlabeledPool,
    pub test: UnlabeledPool,
    pub known_classes: BTreeSet<Label>,
    pub novel_classes: BTreeSet<Label>,
}

impl DatasetSplit {
    /// Every class label in the split.
    pub fn vocabulary(&self) -> BTreeSet<Label> {
        self.known_classes
            .union(&self.novel_classes)
            .copied()
            .collect()
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(squared_distance(a, b).sqrt())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Orders `(squared distance, index)` pairs ascending with index tie-break.
#[inline]
pub(crate) fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest of `d2` (squared distances keyed by position), ascending.
pub(crate) fn k_smallest(mut d2: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if k == 0 {
        return Vec::new();
    }
    if k < d2.len() {
        d2.select_nth_unstable_by(k - 1, by_distance_then_index);
        d2.truncate(k);
    }
    d2.sort_unstable_by(by_distance_then_index);
    d2
}

/// Exact k-nearest-neighbour search by linear scan.
///
/// Results are sorted by ascending distance; equal distances are ordered by
/// ascending member index.
pub fn nearest_neighbors(query: &[f64], set: &LabeledSet, k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > set.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds set size {}",
            set.len()
        )));
    }
    check_dim(set.dim(), query.len())?;
    let d2 = set
        .members()
        .iter()
        .enumerate()
        .map(|(i, m)| (squared_distance(query, m.as_ref()), i))
        .collect();
    Ok(k_smallest(d2, k)
        .into_iter()
        .map(|(d2, index)| Neighbor {
            index,
            distance: d2.sqrt(),
        })
        .collect())
}

/// How the known classes of a dataset are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum KnownAssignment {
    /// The first `ceil(fraction * |classes|)` classes in ascending label order.
    FirstFraction(f64),
    Explicit(Vec<Label>),
}

/// Partitions a labelled dataset into train / observed / test.
///
/// Each known class sends `train_fraction` of its members (at least one) to
/// train and splits the rest between observed and test; novel classes are
/// split between observed and test only. Which members go where is decided by
/// a per-class shuffle seeded from `seed`. Members keep their source order
/// inside each partition.
pub fn split_known_novel(
    data: &[LabeledEmbedding],
    assignment: &KnownAssignment,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} not in [0, 1]"
        )));
    }
    let vocabulary: BTreeSet<Label> = data.iter().map(|m| m.label).collect();
    let known: BTreeSet<Label> = match assignment {
        KnownAssignment::FirstFraction(fraction) => {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(Error::invalid(format!(
                    "known fraction {fraction} not in (0, 1]"
                )));
            }
            if vocabulary.len() < 2 {
                return Err(Error::invalid("need at least 2 classes to split"));
            }
            let n_known = (fraction * vocabulary.len() as f64).ceil() as usize;
            vocabulary.iter().copied().take(n_known.max(1)).collect()
        }
        KnownAssignment::Explicit(list) => {
            if list.is_empty() {
                return Err(Error::invalid("explicit known-class list is empty"));
            }
            if let Some(l) = list.iter().find(|l| !vocabulary.contains(l)) {
                return Err(Error::LabelOutsideVocabulary(*l));
            }
            list.iter().copied().collect()
        }
    };
    let novel: BTreeSet<Label> = vocabulary.difference(&known).copied().collect();

    #[derive(Clone, Copy)]
    enum Role {
        Train,
        Observed,
        Test,
    }
    let mut by_class: HashMap<Label, Vec<usize>> = HashMap::new();
    for (i, m) in data.iter().enumerate() {
        by_class.entry(m.label).or_default().push(i);
    }
    let mut roles = vec![Role::Test; data.len()];
    for &label in &vocabulary {
        let mut members = by_class.remove(&label).unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(label) + 1);
        members.shuffle(&mut rng);
        let n_train = if known.contains(&label) {
            ((members.len() as f64 * train_fraction).round() as usize).clamp(1, members.len())
        } else {
            0
        };
        let rest = members.len() - n_train;
        let n_observed = rest / 2;
        for (pos, &i) in members.iter().enumerate() {
            roles[i] = if pos < n_train {
                Role::Train
            } else if pos < n_train + n_observed {
                Role::Observed
            } else {
                Role::Test
            };
        }
    }

    let mut train = Vec::new();
    let mut observed = Vec::new();
    let mut test = Vec::new();
    for (m, role) in data.iter().zip(roles) {
        match role {
            Role::Train => train.push(m.clone()),
            Role::Observed => observed.push((m.embedding.clone(), m.label)),
            Role::Test => test.push((m.embedding.clone(), m.label)),
        }
    }
    let dim = data[0].embedding.dim();
    let train = LabeledSet::from_members(train)?;
    let observed = pool_or_empty(observed, &known, dim)?;
    let test = pool_or_empty(test, &known, dim)?;
    Ok(DatasetSplit {
        train,
        observed,
        test,
        known_classes: known,
        novel_classes: novel,
    })
}

fn pool_or_empty(
    members: Vec<(Embedding, Label)>,
    known: &BTreeSet<Label>,
    dim: usize,
) -> Result<UnlabeledPool> {
    if members.is_empty() {
        Ok(UnlabeledPool {
            dim,
            ..UnlabeledPool::default()
        })
    } else {
        UnlabeledPool::new(members, known)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(id: &str, v: &[f64]) -> Embedding {
        Embedding::new(id, v.to_vec()).unwrap()
    }

    fn set(points: &[(&[f64], Label)]) -> LabeledSet {
        LabeledSet::from_members(
            points
                .iter()
                .enumerate()
                .map(|(i, (v, l))| LabeledEmbedding::new(emb(&format!("c{i}"), v), *l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            Embedding::new("a", vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Embedding::new("a", vec![f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(Embedding::new("a", vec![]), Err(Error::Empty(_))));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        let d = euclidean_distance(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((d - 3f64.sqrt()).abs() < 1e-15);
        assert!((d - 1.7320508).abs() < 1e-7);
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nearest_neighbor_examples() {
        let c = set(&[(&[1.0, 0.0], 0), (&[0.0, 2.0], 1), (&[3.0, 0.0], 0)]);
        let nn = nearest_neighbors(&[0.0, 0.0], &c, 2).unwrap();
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(nn[0].distance, 1.0);
        assert_eq!(nn[1].distance, 2.0);

        let on = nearest_neighbors(&[0.0, 2.0], &c, 1).unwrap();
        assert_eq!(on[0].index, 1);
        assert_eq!(on[0].distance, 0.0);

        let all = nearest_neighbors(&[0.0, 0.0], &c, 3).unwrap();
        assert_eq!(
            all.iter().map(|n| n.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );

        assert!(nearest_neighbors(&[0.0, 0.0], &c, 4).is_err());
        assert!(nearest_neighbors(&[0.0, 0.0], &c, 0).is_err());
        assert!(nearest_neighbors(&[0.0], &c, 1).is_err());
    }

    #[test]
    fn neighbor_ties_break_by_index() {
        let c = set(&[(&[1.0], 0), (&[-1.0], 1), (&[1.0], 2)]);
        let nn = nearest_neighbors(&[0.0], &c, 3).unwrap();
        assert_eq!(
            nn.iter().map(|n| n.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn labeled_set_rejects_duplicates_and_mismatch() {
        let mut c = set(&[(&[0.0, 0.0], 0)]);
        assert!(matches!(
            c.push(LabeledEmbedding::new(emb("c0", &[1.0, 1.0]), 1)),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            c.push(LabeledEmbedding::new(emb("x", &[1.0]), 1)),
            Err(Error::DimensionMismatch { .. })
        ));
        c.push(LabeledEmbedding::new(emb("x", &[1.0, 1.0]), 7))
            .unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.classes().contains(&7));
    }

    fn dataset(n_classes: u32, per_class: usize) -> Vec<LabeledEmbedding> {
        (0..n_classes)
            .flat_map(|l| {
                (0..per_class).map(move |i| {
                    LabeledEmbedding::new(
                        Embedding::new(format!("p{l}-{i}"), vec![l as f64, i as f64]).unwrap(),
                        l,
                    )
                })
            })
            .collect()
    }

    #[test]
    fn first_half_of_196_classes_is_0_to_97() {
        let data = dataset(196, 2);
        let split = split_known_novel(&data, &KnownAssignment::FirstFraction(0.5), 0.5, 1).unwrap();
        assert_eq!(split.known_classes, (0..98).collect());
        assert_eq!(split.novel_classes, (98..196).collect());
    }

    #[test]
    fn two_classes_split_in_half() {
        let data = dataset(2, 10);
        let split = split_known_novel(&data, &KnownAssignment::FirstFraction(0.5), 0.5, 3).unwrap();
        assert_eq!(split.known_classes, BTreeSet::from([0]));
        assert_eq!(split.novel_classes, BTreeSet::from([1]));
        assert!(split.train.labels().all(|l| l == 0));
        assert_eq!(split.train.len(), 5);
        assert_eq!(split.observed.len() + split.test.len(), 15);
    }

    #[test]
    fn split_is_deterministic_and_conserves_ids() {
        let data = dataset(6, 9);
        let a = split_known_novel(&data, &KnownAssignment::FirstFraction(0.5), 0.4, 11).unwrap();
        let b = split_known_novel(&data, &KnownAssignment::FirstFraction(0.5), 0.4, 11).unwrap();
        let ids = |s: &DatasetSplit| {
            let mut v: Vec<String> = s.train.ids().map(str::to_owned).collect();
            v.extend(s.observed.members().iter().map(|e| e.id().to_owned()));
            v.extend(s.test.members().iter().map(|e| e.id().to_owned()));
            v
        };
        assert_eq!(ids(&a), ids(&b));
        let mut all = ids(&a);
        all.sort();
        let mut source: Vec<String> = data.iter().map(|m| m.embedding.id().to_owned()).collect();
        source.sort();
        assert_eq!(all, source);
        assert!(a.train.labels().all(|l| !a.novel_classes.contains(&l)));
        for pool in [&a.observed, &a.test] {
            assert!(pool.hidden_truth().iter().any(|t| t.is_novel));
            assert!(pool.hidden_truth().iter().any(|t| !t.is_novel));
        }
    }

    #[test]
    fn split_errors() {
        let one = dataset(1, 4);
        assert!(split_known_novel(&one, &KnownAssignment::FirstFraction(0.5), 0.5, 0).is_err());
        let data = dataset(3, 4);
        assert!(matches!(
            split_known_novel(&data, &KnownAssignment::Explicit(vec![0, 9]), 0.5, 0),
            Err(Error::LabelOutsideVocabulary(9))
        ));
        let s = split_known_novel(&data, &KnownAssignment::Explicit(vec![2]), 0.5, 0).unwrap();
        assert_eq!(s.known_classes, BTreeSet::from([2]));
        assert_eq!(s.novel_classes, BTreeSet::from([0, 1]));
    }
}
