//! Novelty scores, the open-set decision rule and threshold calibration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dim, squared_distance, Label, LabeledSet};
use crate::error::{Error, Result};
use crate::evaluation::f1_from_counts;
use crate::kernel::{class_posterior, ClassPosterior, KernelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyMeasure {
    /// Distance to the nearest labelled centre.
    NnDistance,
    /// One minus the largest class probability.
    Density,
    /// Shannon entropy (nats) of the class posterior.
    Entropy,
}

impl NoveltyMeasure {
    pub const ALL: [NoveltyMeasure; 3] = [
        NoveltyMeasure::NnDistance,
        NoveltyMeasure::Density,
        NoveltyMeasure::Entropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoveltyMeasure::NnDistance => "nn_distance",
            NoveltyMeasure::Density => "density",
            NoveltyMeasure::Entropy => "entropy",
        }
    }

    /// Score derived from an already computed posterior. `None` for
    /// `NnDistance`, which does not use the posterior.
    pub fn from_posterior(self, posterior: &ClassPosterior) -> Option<f64> {
        match self {
            NoveltyMeasure::NnDistance => None,
            NoveltyMeasure::Density => Some(posterior.max_complement()),
            NoveltyMeasure::Entropy => Some(posterior.entropy()),
        }
    }
}

impl fmt::Display for NoveltyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoveltyMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoveltyMeasure::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown novelty measure `{s}`")))
    }
}

pub fn novelty_nn_distance(x: &[f64], centers: &LabeledSet) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    check_dim(centers.dim(), x.len())?;
    let d2 = centers
        .members()
        .iter()
        .map(|c| squared_distance(x, c.as_ref()))
        .fold(f64::INFINITY, f64::min);
    Ok(d2.sqrt())
}

pub fn novelty_density(x: &[f64], centers: &LabeledSet, params: &KernelParams) -> Result<f64> {
    Ok(class_posterior(x, centers, params)?.max_complement())
}

pub fn novelty_entropy(x: &[f64], centers: &LabeledSet, params: &KernelParams) -> Result<f64> {
    Ok(class_posterior(x, centers, params)?.entropy())
}

pub fn novelty_score(
    x: &[f64],
    centers: &LabeledSet,
    params: &KernelParams,
    measure: NoveltyMeasure,
) -> Result<f64> {
    match measure {
        NoveltyMeasure::NnDistance => novelty_nn_distance(x, centers),
        NoveltyMeasure::Density => novelty_density(x, centers, params),
        NoveltyMeasure::Entropy => novelty_entropy(x, centers, params),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Known(Label),
    Novel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetPrediction {
    pub verdict: Verdict,
    pub novelty_score: f64,
    pub threshold_used: f64,
}

impl OpenSetPrediction {
    /// Applies the decision rule: novel iff `score > delta`, otherwise `known`.
    pub fn decide(known: Label, novelty_score: f64, delta: f64) -> Self {
        let verdict = if novelty_score > delta {
            Verdict::Novel
        } else {
            Verdict::Known(known)
        };
        Self {
            verdict,
            novelty_score,
            threshold_used: delta,
        }
    }

    pub fn is_novel(&self) -> bool {
        self.verdict == Verdict::Novel
    }
}

/// Classifies `x` as one of the known classes, or as novel when its novelty
/// score exceeds `delta`.
pub fn open_set_predict(
    x: &[f64],
    centers: &LabeledSet,
    params: &KernelParams,
    measure: NoveltyMeasure,
    delta: f64,
) -> Result<OpenSetPrediction> {
    let posterior = class_posterior(x, centers, params)?;
    let score = match measure.from_posterior(&posterior) {
        Some(s) => s,
        None => novelty_nn_distance(x, centers)?,
    };
    Ok(OpenSetPrediction::decide(
        posterior.argmax().0,
        score,
        delta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationObjective {
    #[default]
    MaxF1,
}

/// Candidate thresholds for `scores`: `-inf`, the midpoints between
/// consecutive distinct sorted scores, and `+inf`, in ascending order.
pub fn candidate_thresholds(scores: &[(f64, bool)]) -> Vec<f64> {
    let mut values: Vec<f64> = scores.iter().map(|s| s.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut out = Vec::with_capacity(values.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(values.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Picks the threshold maximising novelty-detection F1 on `scores`
/// (`(novelty score, is novel)` pairs). Ties go to the smallest threshold.
pub fn calibrate_threshold(scores: &[(f64, bool)], objective: CalibrationObjective) -> Result<f64> {
    let CalibrationObjective::MaxF1 = objective;
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::NonFinite("calibration scores".into()));
    }
    let positives = scores.iter().filter(|s| s.1).count();
    if positives == 0 || positives == scores.len() {
        return Err(Error::SingleClass(
            "calibration needs novel and known examples",
        ));
    }

    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let candidates = candidate_thresholds(scores);

    // Walk candidates ascending; everything strictly above the candidate is
    // predicted novel. `below` counts examples at or under the candidate.
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut below, mut tp, mut fp) = (0usize, positives, scores.len() - positives);
    for &delta in &candidates {
        while below < sorted.len() && sorted[below].0 <= delta {
            if sorted[below].1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            below += 1;
        }
        let f1 = f1_from_counts(tp, fp, positives - tp);
        if f1 > best.1 {
            best = (delta, f1);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedding, LabeledEmbedding};
    use crate::evaluation::f1_at_threshold;

    fn centers(points: &[(&[f64], Label)]) -> LabeledSet {
        LabeledSet::from_members(
            points
                .iter()
                .enumerate()
                .map(|(i, (v, l))| {
                    LabeledEmbedding::new(Embedding::new(format!("c{i}"), v.to_vec()).unwrap(), *l)
                })
                .collect(),
        )
        .unwrap()
    }

    fn p(sigma: f64) -> KernelParams {
        KernelParams::new(sigma).unwrap()
    }

    #[test]
    fn nn_distance_examples() {
        let c = centers(&[(&[1.0, 0.0], 0), (&[0.0, 2.0], 1), (&[3.0, 0.0], 0)]);
        assert_eq!(novelty_nn_distance(&[0.0, 0.0], &c).unwrap(), 1.0);
        assert_eq!(novelty_nn_distance(&[0.0, 2.0], &c).unwrap(), 0.0);
        let single = centers(&[(&[0.0, 0.0], 0)]);
        assert_eq!(novelty_nn_distance(&[3.0, 4.0], &single).unwrap(), 5.0);
        assert!(novelty_nn_distance(&[0.0, 0.0], &LabeledSet::with_dim(2)).is_err());
    }

    #[test]
    fn density_and_entropy_examples() {
        let single = centers(&[(&[0.0, 0.0], 4), (&[1.0, 1.0], 4)]);
        assert_eq!(novelty_density(&[7.0, 7.0], &single, &p(1.0)).unwrap(), 0.0);
        assert_eq!(novelty_entropy(&[7.0, 7.0], &single, &p(1.0)).unwrap(), 0.0);

        let even = centers(&[(&[-1.0, 0.0], 0), (&[1.0, 0.0], 1)]);
        assert_eq!(novelty_density(&[0.0, 3.0], &even, &p(2.0)).unwrap(), 0.5);
        let h = novelty_entropy(&[0.0, 3.0], &even, &p(2.0)).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);

        let two = centers(&[(&[0.0, 0.0], 0), (&[2.0, 0.0], 1)]);
        let q = (-2.0f64).exp() / (1.0 + (-2.0f64).exp());
        let d = novelty_density(&[0.0, 0.0], &two, &p(1.0)).unwrap();
        assert!((d - q).abs() < 1e-15);
        assert!((d - 0.1192).abs() < 1e-4);
        let h = novelty_entropy(&[0.0, 0.0], &two, &p(1.0)).unwrap();
        let expected = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
        assert!((h - expected).abs() < 1e-14);
        assert!((h - 0.3654).abs() < 1e-4);
    }

    #[test]
    fn predict_examples() {
        let c = centers(&[(&[0.0, 0.0], 2), (&[5.0, 5.0], 3)]);
        let on =
            open_set_predict(&[5.0, 5.0], &c, &p(1.0), NoveltyMeasure::NnDistance, 0.5).unwrap();
        assert_eq!(on.verdict, Verdict::Known(3));
        assert_eq!(on.novelty_score, 0.0);

        for x in [[0.0, 0.0], [100.0, 3.0]] {
            for m in NoveltyMeasure::ALL {
                let pred = open_set_predict(&x, &c, &p(1.0), m, -1.0).unwrap();
                assert!(pred.is_novel());
                assert_eq!(pred.threshold_used, -1.0);
            }
        }

        let single = centers(&[(&[0.0, 0.0], 0)]);
        let far = open_set_predict(
            &[3.0, 4.0],
            &single,
            &p(1.0),
            NoveltyMeasure::NnDistance,
            4.0,
        )
        .unwrap();
        assert_eq!(far.novelty_score, 5.0);
        assert!(far.is_novel());
    }

    #[test]
    fn boundary_score_is_known() {
        assert_eq!(
            OpenSetPrediction::decide(1, 2.0, 2.0).verdict,
            Verdict::Known(1)
        );
        assert_eq!(
            OpenSetPrediction::decide(1, 2.0 + 1e-12, 2.0).verdict,
            Verdict::Novel
        );
    }

    #[test]
    fn calibration_separable() {
        let scores = [(0.1, false), (0.2, false), (0.9, true), (1.5, true)];
        let delta = calibrate_threshold(&scores, CalibrationObjective::MaxF1).unwrap();
        assert!(delta > 0.2 && delta < 0.9);
        assert_eq!(f1_at_threshold(&scores, delta).unwrap(), 1.0);
    }

    #[test]
    fn calibration_hand_sweep() {
        // thresholds: -inf -> F1 2/3, 0.3 -> 0.8, 0.5 -> 0.5, 0.7 -> 2/3, +inf -> 0
        let scores = [(0.8, true), (0.4, true), (0.6, false), (0.2, false)];
        let delta = calibrate_threshold(&scores, CalibrationObjective::MaxF1).unwrap();
        assert!((delta - 0.3).abs() < 1e-15);
        assert!((f1_at_threshold(&scores, delta).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn calibration_identical_scores() {
        let scores = [(0.5, true), (0.5, false), (0.5, false)];
        let delta = calibrate_threshold(&scores, CalibrationObjective::MaxF1).unwrap();
        // all-novel baseline: precision 1/3, recall 1 -> 0.5 beats predicting nothing
        assert_eq!(delta, f64::NEG_INFINITY);
        assert!((f1_at_threshold(&scores, delta).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(
            calibrate_threshold(&[(0.1, true), (0.2, true)], CalibrationObjective::MaxF1),
            Err(Error::SingleClass(_))
        ));
        assert!(calibrate_threshold(&[], CalibrationObjective::MaxF1).is_err());
        assert!(calibrate_threshold(
            &[(f64::NAN, true), (0.0, false)],
            CalibrationObjective::MaxF1
        )
        .is_err());
    }

    #[test]
    fn measure_names_round_trip() {
        for m in NoveltyMeasure::ALL {
            assert_eq!(m.as_str().parse::<NoveltyMeasure>().unwrap(), m);
        }
        assert!("softmax".parse::<NoveltyMeasure>().is_err());
    }
}
