//! Gaussian-kernel class posterior over a set of labelled centres.
//!
//! `Pr(y = l | x)` is the share of kernel mass `exp(-|x - c|^2 / 2 sigma^2)`
//! contributed by centres of class `l`. All exponents are shifted by their
//! maximum before exponentiation, so the largest term is exactly 1 and the
//! normaliser can never underflow.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{
    check_dim, k_smallest, squared_distance, Label, LabeledEmbedding, LabeledSet,
};
use crate::error::{Error, Result};

/// Which centres enter the kernel sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborLimit {
    #[default]
    All,
    /// Only the `n` nearest centres.
    Nearest(usize),
}

impl fmt::Display for NeighborLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeighborLimit::All => f.write_str("all"),
            NeighborLimit::Nearest(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for NeighborLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(NeighborLimit::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(NeighborLimit::Nearest(n)),
            _ => Err(Error::invalid(format!(
                "neighbor_limit must be `all` or a positive integer, got `{s}`"
            ))),
        }
    }
}

impl Serialize for NeighborLimit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NeighborLimit::All => s.serialize_str("all"),
            NeighborLimit::Nearest(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for NeighborLimit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => NeighborLimit::from_str(&n.to_string()),
            Raw::Text(s) => NeighborLimit::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Shared Gaussian standard deviation, in embedding distance units.
    pub sigma: f64,
    #[serde(default)]
    pub neighbor_limit: NeighborLimit,
}

impl KernelParams {
    pub fn new(sigma: f64) -> Result<Self> {
        let params = Self {
            sigma,
            neighbor_limit: NeighborLimit::All,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_neighbor_limit(mut self, limit: NeighborLimit) -> Self {
        self.neighbor_limit = limit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if self.neighbor_limit == NeighborLimit::Nearest(0) {
            return Err(Error::invalid("neighbor_limit must be positive"));
        }
        Ok(())
    }

    /// `-1 / (2 sigma^2)`: multiply a squared distance by this to get a log kernel.
    #[inline]
    pub(crate) fn log_kernel_scale(&self) -> f64 {
        -0.5 / (self.sigma * self.sigma)
    }

    /// Number of centres that enter the sums for a set of size `alpha`.
    pub(crate) fn support_size(&self, alpha: usize) -> Result<usize> {
        match self.neighbor_limit {
            NeighborLimit::All => Ok(alpha),
            NeighborLimit::Nearest(n) if n <= alpha => Ok(n),
            NeighborLimit::Nearest(n) => Err(Error::invalid(format!(
                "neighbor_limit {n} exceeds labeled set size {alpha}"
            ))),
        }
    }
}

/// Class probabilities and the centre indices that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    probs: BTreeMap<Label, f64>,
    support: Vec<usize>,
}

impl ClassPosterior {
    pub fn probs(&self) -> &BTreeMap<Label, f64> {
        &self.probs
    }

    pub fn prob(&self, label: Label) -> f64 {
        self.probs.get(&label).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Most probable class; ties go to the smallest label.
    pub fn argmax(&self) -> (Label, f64) {
        let mut best: Option<(Label, f64)> = None;
        // BTreeMap iterates labels ascending, so strict `>` keeps the smallest on ties.
        for (&l, &p) in &self.probs {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((l, p));
            }
        }
        best.expect("posterior over a non-empty support")
    }

    /// `1 - max_l p_l`, summed over the non-maximal classes so that tiny
    /// values survive instead of cancelling against 1.
    pub fn max_complement(&self) -> f64 {
        let (top, _) = self.argmax();
        self.probs
            .iter()
            .filter(|(&l, _)| l != top)
            .map(|(_, &p)| p)
            .sum()
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let h: f64 = self
            .probs
            .values()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        h.max(0.0)
    }
}

/// Posterior from squared distances to every centre (`d2[j]` pairs with `labels[j]`).
pub(crate) fn posterior_from_sq_distances(
    d2: &[f64],
    labels: &[Label],
    params: &KernelParams,
) -> Result<ClassPosterior> {
    debug_assert_eq!(d2.len(), labels.len());
    let n = params.support_size(d2.len())?;
    if n == 0 {
        return Err(Error::Empty("labeled set"));
    }
    let support: Vec<usize> = if n == d2.len() {
        (0..n).collect()
    } else {
        let keyed = d2.iter().copied().zip(0..).collect();
        k_smallest(keyed, n).into_iter().map(|(_, j)| j).collect()
    };
    let scale = params.log_kernel_scale();
    // The smallest distance gives the largest exponent.
    let shift = support
        .iter()
        .map(|&j| d2[j] * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut mass: BTreeMap<Label, f64> = BTreeMap::new();
    let mut total = 0.0;
    for &j in &support {
        let w = (d2[j] * scale - shift).exp();
        *mass.entry(labels[j]).or_insert(0.0) += w;
        total += w;
    }
    if !(total >= 1.0 && total.is_finite()) {
        return Err(Error::Invariant(format!(
            "kernel normaliser {total} outside [1, inf)"
        )));
    }
    for v in mass.values_mut() {
        *v /= total;
    }
    Ok(ClassPosterior {
        probs: mass,
        support,
    })
}

/// Gaussian-kernel class posterior of `x` against the centres in `centers`.
pub fn class_posterior(
    x: &[f64],
    centers: &LabeledSet,
    params: &KernelParams,
) -> Result<ClassPosterior> {
    params.validate()?;
    if centers.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    check_dim(centers.dim(), x.len())?;
    let d2: Vec<f64> = centers
        .members()
        .iter()
        .map(|c| squared_distance(x, c.as_ref()))
        .collect();
    let labels: Vec<Label> = centers.labels().collect();
    posterior_from_sq_distances(&d2, &labels, params)
}

/// Most probable class of `x`; ties go to the smallest label.
pub fn classify(x: &[f64], centers: &LabeledSet, params: &KernelParams) -> Result<Label> {
    Ok(class_posterior(x, centers, params)?.argmax().0)
}

/// Adds a labelled centre to `centers`.
pub fn insert_center(centers: &mut LabeledSet, item: LabeledEmbedding) -> Result<()> {
    centers.push(item)
}
