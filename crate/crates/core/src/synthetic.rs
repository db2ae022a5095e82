//! Seeded Gaussian-mixture embeddings with a known/novel class split.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    split_known_novel, DatasetSplit, Embedding, KnownAssignment, Label, LabeledEmbedding,
    UnlabeledPool,
};
use crate::error::{Error, Result};
use crate::rng;

const CENTER_STREAM: u64 = 0;
const SPLIT_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub n_classes: usize,
    pub dim: usize,
    pub per_class_count: usize,
    /// Side of the hypercube the class centres are drawn from.
    pub class_center_spread: f64,
    pub within_class_std: f64,
    /// Fraction of classes (lowest labels first) treated as known.
    pub fraction_known: f64,
    /// Fraction of each known class that goes to the training set.
    pub train_fraction: f64,
    pub seed: u64,
}

impl MixtureConfig {
    /// 20 well separated classes (spread / std = 100), 50 points each.
    pub fn separable(seed: u64) -> Self {
        Self {
            n_classes: 20,
            dim: 16,
            per_class_count: 50,
            class_center_spread: 100.0,
            within_class_std: 1.0,
            fraction_known: 0.5,
            train_fraction: 0.5,
            seed,
        }
    }

    /// Same layout as [`MixtureConfig::separable`] with spread / std = 5.
    pub fn hard(seed: u64) -> Self {
        Self {
            class_center_spread: 5.0,
            ..Self::separable(seed)
        }
    }

    pub fn is_separable(&self) -> bool {
        self.within_class_std < self.class_center_spread
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if self.per_class_count == 0 {
            return Err(Error::invalid("per_class_count must be positive"));
        }
        if !(self.class_center_spread.is_finite() && self.class_center_spread > 0.0) {
            return Err(Error::invalid("class_center_spread must be positive"));
        }
        if !(self.within_class_std.is_finite() && self.within_class_std >= 0.0) {
            return Err(Error::invalid("within_class_std must be non-negative"));
        }
        if !(self.fraction_known > 0.0 && self.fraction_known <= 1.0) {
            return Err(Error::invalid("fraction_known must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::invalid("train_fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

/// All generated points before splitting, in class order.
pub fn generate_points(cfg: &MixtureConfig) -> Result<Vec<LabeledEmbedding>> {
    cfg.validate()?;
    let mut centers_rng = rng::stream(cfg.seed, CENTER_STREAM);
    let centers: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| {
            (0..cfg.dim)
                .map(|_| centers_rng.random::<f64>() * cfg.class_center_spread)
                .collect()
        })
        .collect();
    let width = cfg.per_class_count.to_string().len();
    let class_width = cfg.n_classes.to_string().len();
    let mut data = Vec::with_capacity(cfg.n_classes * cfg.per_class_count);
    for (class, center) in centers.iter().enumerate() {
        let mut class_rng = rng::stream(cfg.seed, class as u64 + 1);
        for i in 0..cfg.per_class_count {
            let v: Vec<f64> = center
                .iter()
                .map(|c| c + cfg.within_class_std * class_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let id = format!("c{class:0class_width$}-{i:0width$}");
            data.push(LabeledEmbedding::new(
                Embedding::new(id, v)?,
                class as Label,
            ));
        }
    }
    Ok(data)
}

/// Drops members from whichever side (known or novel) is larger until both
/// sides have equal counts; always from the currently largest class, its
/// last member first.
fn balance(pool: &UnlabeledPool, known: &BTreeSet<Label>) -> Result<UnlabeledPool> {
    if pool.is_empty() {
        return Ok(pool.clone());
    }
    let truth = pool.hidden_truth();
    let n_novel = truth.iter().filter(|t| t.is_novel).count();
    let n_known = truth.len() - n_novel;
    let (excess_side_novel, mut excess) = if n_novel > n_known {
        (true, n_novel - n_known)
    } else {
        (false, n_known - n_novel)
    };
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, t) in truth.iter().enumerate() {
        if t.is_novel == excess_side_novel {
            by_class.entry(t.label).or_default().push(i);
        }
    }
    let mut dropped = vec![false; truth.len()];
    while excess > 0 {
        // largest class, ties to the smallest label
        let members = by_class
            .values_mut()
            .rev()
            .max_by_key(|m| m.len())
            .filter(|m| !m.is_empty())
            .ok_or_else(|| Error::Invariant("nothing left to balance".into()))?;
        dropped[members.pop().expect("non-empty")] = true;
        excess -= 1;
    }
    let kept = pool
        .members()
        .iter()
        .zip(truth)
        .zip(&dropped)
        .filter(|(_, &d)| !d)
        .map(|((e, t), _)| (e.clone(), t.label))
        .collect();
    UnlabeledPool::new(kept, known)
}

/// Generates a dataset and splits it: the lowest-labelled classes are known,
/// training sets contain only known classes, and observed and test pools are
/// trimmed to equal known and novel counts.
pub fn generate_mixture(cfg: &MixtureConfig) -> Result<DatasetSplit> {
    let data = generate_points(cfg)?;
    let mut split = split_known_novel(
        &data,
        &KnownAssignment::FirstFraction(cfg.fraction_known),
        cfg.train_fraction,
        rng::sub_seed(cfg.seed, SPLIT_TAG),
    )?;
    if !split.novel_classes.is_empty() {
        split.observed = balance(&split.observed, &split.known_classes)?;
        split.test = balance(&split.test, &split.known_classes)?;
    }
    Ok(split)
}
