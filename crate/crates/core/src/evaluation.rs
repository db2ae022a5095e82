//! Novelty-detection and classification metrics.
//!
//! Novel examples are the positive class for ROC and precision-recall
//! computations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{k_smallest, squared_distance, Label};
use crate::error::{Error, Result};
use crate::open_set::{OpenSetPrediction, Verdict};

/// Anything carrying a novelty score and a ground-truth novelty flag.
pub trait Scored {
    fn score(&self) -> f64;
    fn is_novel(&self) -> bool;
}

impl Scored for (f64, bool) {
    fn score(&self) -> f64 {
        self.0
    }
    fn is_novel(&self) -> bool {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: String,
    pub novelty_score: f64,
    pub is_novel: bool,
    pub predicted: Option<OpenSetPrediction>,
    pub true_label: Label,
}

impl Scored for ScoredExample {
    fn score(&self) -> f64 {
        self.novelty_score
    }
    fn is_novel(&self) -> bool {
        self.is_novel
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub aupr: f64,
    pub f1: f64,
    pub open_set_accuracy: f64,
    pub novel_accuracy: f64,
    pub combined_accuracy: f64,
    pub recall_at_m: BTreeMap<usize, f64>,
}

/// Groups of equal scores, in descending score order, as `(positives, negatives)`.
fn descending_blocks<S: Scored>(scores: &[S]) -> Result<Vec<(u64, u64)>> {
    if scores.iter().any(|s| s.score().is_nan()) {
        return Err(Error::NonFinite("novelty scores".into()));
    }
    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|s| (s.score(), s.is_novel())).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut blocks: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for (score, novel) in sorted {
        if last != Some(score) {
            blocks.push((0, 0));
            last = Some(score);
        }
        let block = blocks.last_mut().expect("pushed above");
        if novel {
            block.0 += 1;
        } else {
            block.1 += 1;
        }
    }
    Ok(blocks)
}

/// Area under the ROC curve: the probability that a random novel example
/// outscores a random known one, ties counting one half.
pub fn auroc<S: Scored>(scores: &[S]) -> Result<f64> {
    let blocks = descending_blocks(scores)?;
    let positives: u64 = blocks.iter().map(|b| b.0).sum();
    let negatives: u64 = blocks.iter().map(|b| b.1).sum();
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass("auroc needs novel and known examples"));
    }
    // Twice the concordance count, kept integral so the result is exact.
    let mut twice = 0u64;
    let mut negatives_below = negatives;
    for (pos, neg) in blocks {
        negatives_below -= neg;
        twice += pos * (2 * negatives_below + neg);
    }
    Ok(twice as f64 / (2 * positives * negatives) as f64)
}

/// Area under the precision-recall curve as average precision, with tied
/// scores entering the curve as a single step.
pub fn aupr<S: Scored>(scores: &[S]) -> Result<f64> {
    let blocks = descending_blocks(scores)?;
    let positives: u64 = blocks.iter().map(|b| b.0).sum();
    if positives == 0 {
        return Err(Error::SingleClass("aupr needs at least one novel example"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (pos, neg) in blocks {
        tp += pos;
        fp += neg;
        if pos > 0 {
            ap += average_precision_term(pos, tp, fp, positives);
        }
    }
    Ok(ap)
}

/// One step of average precision: recall gained times precision reached.
#[inline]
pub fn average_precision_term(gained: u64, tp: u64, fp: u64, positives: u64) -> f64 {
    gained as f64 / positives as f64 * (tp as f64 / (tp + fp) as f64)
}

/// F1 from confusion counts, defined as 0 when precision + recall is 0.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Novelty-detection F1 of the rule "novel when score > delta".
pub fn f1_at_threshold<S: Scored>(scores: &[S], delta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for s in scores {
        match (s.score() > delta, s.is_novel()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
}

/// ROC curve as (false positive rate, true positive rate), starting at (0, 0).
pub fn roc_curve<S: Scored>(scores: &[S]) -> Result<Vec<CurvePoint>> {
    let blocks = descending_blocks(scores)?;
    let positives: u64 = blocks.iter().map(|b| b.0).sum();
    let negatives: u64 = blocks.iter().map(|b| b.1).sum();
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass(
            "roc curve needs novel and known examples",
        ));
    }
    let mut points = vec![CurvePoint { x: 0.0, y: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (pos, neg) in blocks {
        tp += pos;
        fp += neg;
        points.push(CurvePoint {
            x: fp as f64 / negatives as f64,
            y: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Precision-recall curve as (recall, precision), one point per score block.
pub fn pr_curve<S: Scored>(scores: &[S]) -> Result<Vec<CurvePoint>> {
    let blocks = descending_blocks(scores)?;
    let positives: u64 = blocks.iter().map(|b| b.0).sum();
    if positives == 0 {
        return Err(Error::SingleClass(
            "pr curve needs at least one novel example",
        ));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    Ok(blocks
        .into_iter()
        .map(|(pos, neg)| {
            tp += pos;
            fp += neg;
            CurvePoint {
                x: tp as f64 / positives as f64,
                y: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect())
}

/// Accuracy with every novel class collapsed into one "novel" superclass.
///
/// Entries are `(prediction, true label, is novel)`.
pub fn open_set_accuracy(predictions: &[(OpenSetPrediction, Label, bool)]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let correct = predictions
        .iter()
        .filter(|(p, label, novel)| match p.verdict {
            Verdict::Novel => *novel,
            Verdict::Known(l) => !*novel && l == *label,
        })
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value: f64,
    pub count: usize,
    /// Set when there was nothing to evaluate; `value` is then 0.
    pub degenerate: bool,
}

/// Fraction of `(predicted, true)` pairs that agree. Every true label must
/// belong to `vocabulary`; an empty input yields a degenerate 0.
pub fn closed_accuracy(pairs: &[(Label, Label)], vocabulary: &BTreeSet<Label>) -> Result<Accuracy> {
    if let Some((_, t)) = pairs.iter().find(|(_, t)| !vocabulary.contains(t)) {
        return Err(Error::LabelOutsideVocabulary(*t));
    }
    if pairs.is_empty() {
        return Ok(Accuracy {
            value: 0.0,
            count: 0,
            degenerate: true,
        });
    }
    let correct = pairs.iter().filter(|(p, t)| p == t).count();
    Ok(Accuracy {
        value: correct as f64 / pairs.len() as f64,
        count: pairs.len(),
        degenerate: false,
    })
}

/// Recall@m for every `m` in `ms`, over the query points `queries` (indices
/// into `points`). Neighbours are searched among all of `points`, excluding
/// the query itself; equal distances are ordered by index.
pub fn recall_at_ms<P: AsRef<[f64]>>(
    points: &[P],
    labels: &[Label],
    queries: &[usize],
    ms: &[usize],
) -> Result<Vec<f64>> {
    if points.len() != labels.len() {
        return Err(Error::invalid("points and labels differ in length"));
    }
    if points.len() < 2 {
        return Err(Error::invalid("recall@m needs at least 2 examples"));
    }
    if queries.is_empty() {
        return Err(Error::Empty("recall@m queries"));
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= points.len()) {
        return Err(Error::invalid(format!("query index {q} out of range")));
    }
    let max_m = match ms.iter().max() {
        Some(&m) => m,
        None => return Ok(Vec::new()),
    };
    if ms.contains(&0) || max_m >= points.len() {
        return Err(Error::invalid(format!(
            "m must be in [1, {}), got {ms:?}",
            points.len()
        )));
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.as_ref().len(),
        });
    }
    // rank of the first same-label neighbour per query (usize::MAX if none within max_m)
    let first_hit: Vec<usize> = queries
        .iter()
        .map(|&q| {
            let x = points[q].as_ref();
            let d2 = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != q)
                .map(|(j, p)| (squared_distance(x, p.as_ref()), j))
                .collect();
            k_smallest(d2, max_m)
                .iter()
                .position(|&(_, j)| labels[j] == labels[q])
                .unwrap_or(usize::MAX)
        })
        .collect();
    Ok(ms
        .iter()
        .map(|&m| first_hit.iter().filter(|&&r| r < m).count() as f64 / queries.len() as f64)
        .collect())
}

/// Recall@m over all points.
pub fn recall_at_m<P: AsRef<[f64]>>(points: &[P], labels: &[Label], m: usize) -> Result<f64> {
    let all: Vec<usize> = (0..points.len()).collect();
    Ok(recall_at_ms(points, labels, &all, &[m])?[0])
}
