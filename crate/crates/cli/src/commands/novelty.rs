use std::collections::BTreeMap;

use osal_core::evaluation::{pr_curve, roc_curve};
use osal_core::io::{json_f64, write_curve, write_scores, ScoreRow};
use osal_core::open_set::{novelty_nn_distance, CalibrationObjective};
use osal_core::{
    aupr, auroc, calibrate_threshold, class_posterior, f1_at_threshold, open_set_accuracy, rng,
    DatasetSplit, KernelParams, Label, NoveltyMeasure, OpenSetPrediction,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::data::{json_bytes, load_split, manifest_comment, Outputs};
use crate::error::CliError;

const CALIBRATION_STREAM: u64 = 0xCA1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureMetrics {
    pub auroc: f64,
    pub aupr: f64,
    pub f1: f64,
    pub open_set_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedNovelty {
    pub seed: u64,
    pub manifest: String,
    pub calibration_size: usize,
    pub evaluation_size: usize,
    pub thresholds: BTreeMap<NoveltyMeasure, f64>,
    pub metrics: BTreeMap<NoveltyMeasure, MeasureMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyReport {
    pub manifest: String,
    pub calibration_fraction: f64,
    /// Means over seeds.
    pub metrics: BTreeMap<NoveltyMeasure, MeasureMetrics>,
    pub per_seed: Vec<SeedNovelty>,
}

struct Scored {
    predicted: Label,
    scores: BTreeMap<NoveltyMeasure, f64>,
}

fn score_member(
    x: &[f64],
    split: &DatasetSplit,
    params: &KernelParams,
    measures: &[NoveltyMeasure],
) -> osal_core::Result<Scored> {
    let posterior = class_posterior(x, &split.train, params)?;
    let mut scores = BTreeMap::new();
    for &m in measures {
        let s = match m.from_posterior(&posterior) {
            Some(s) => s,
            None => novelty_nn_distance(x, &split.train)?,
        };
        scores.insert(m, s);
    }
    Ok(Scored {
        predicted: posterior.argmax().0,
        scores,
    })
}

/// Withheld calibration indices and evaluation indices, both ascending.
pub fn calibration_slice(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let perm = rng::permutation(n, seed, CALIBRATION_STREAM);
    let n_cal = ((fraction * n as f64).round() as usize)
        .clamp(1, n.max(2) - 1)
        .min(n);
    let mut cal = perm[..n_cal].to_vec();
    let mut eval = perm[n_cal..].to_vec();
    cal.sort_unstable();
    eval.sort_unstable();
    (cal, eval)
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, out: &mut Outputs) -> Result<SeedNovelty, CliError> {
    let split = load_split(cfg, seed)?;
    let params = cfg.kernel_params()?;
    let pool = &split.observed;
    if pool.len() < 2 {
        return Err(CliError::Data(
            "observed set needs at least 2 members".into(),
        ));
    }
    let scored: Vec<Scored> = pool
        .members()
        .par_iter()
        .map(|e| score_member(e.vector(), &split, &params, &cfg.measures))
        .collect::<osal_core::Result<_>>()?;
    let truth = pool.hidden_truth();
    let (cal, eval) = calibration_slice(pool.len(), cfg.calibration_fraction, seed);
    let hash = cfg.manifest_hash(&[seed]);
    let comments = manifest_comment(&hash);

    let mut thresholds = BTreeMap::new();
    let mut metrics = BTreeMap::new();
    for &m in &cfg.measures {
        let pairs = |idx: &[usize]| -> Vec<(f64, bool)> {
            idx.iter()
                .map(|&i| (scored[i].scores[&m], truth[i].is_novel))
                .collect()
        };
        let cal_scores = pairs(&cal);
        let eval_scores = pairs(&eval);
        let delta = calibrate_threshold(&cal_scores, CalibrationObjective::MaxF1)
            .map_err(|e| CliError::Data(format!("calibrating {m}: {e}")))?;
        let predictions: Vec<(OpenSetPrediction, Label, bool)> = eval
            .iter()
            .map(|&i| {
                (
                    OpenSetPrediction::decide(scored[i].predicted, scored[i].scores[&m], delta),
                    truth[i].label,
                    truth[i].is_novel,
                )
            })
            .collect();
        let row = MeasureMetrics {
            auroc: auroc(&eval_scores)?,
            aupr: aupr(&eval_scores)?,
            f1: f1_at_threshold(&eval_scores, delta)?,
            open_set_accuracy: open_set_accuracy(&predictions)?,
        };
        thresholds.insert(m, delta);
        metrics.insert(m, row);

        let rows: Vec<ScoreRow> = eval
            .iter()
            .map(|&i| ScoreRow {
                id: pool.members()[i].id().to_owned(),
                score: scored[i].scores[&m],
                is_novel: truth[i].is_novel,
            })
            .collect();
        out.add(
            format!("scores/{m}_seed{seed}.csv"),
            write_scores(&rows, &comments),
        );
        out.add(
            format!("curves/roc_{m}_seed{seed}.csv"),
            write_curve(&roc_curve(&eval_scores)?, &comments),
        );
        out.add(
            format!("curves/pr_{m}_seed{seed}.csv"),
            write_curve(&pr_curve(&eval_scores)?, &comments),
        );
    }
    Ok(SeedNovelty {
        seed,
        manifest: hash,
        calibration_size: cal.len(),
        evaluation_size: eval.len(),
        thresholds,
        metrics,
    })
}

fn metrics_json(metrics: &BTreeMap<NoveltyMeasure, MeasureMetrics>) -> Value {
    let mut map = Map::new();
    for (m, row) in metrics {
        map.insert(
            m.as_str().into(),
            json!({
                "auroc": json_f64(row.auroc),
                "aupr": json_f64(row.aupr),
                "f1": json_f64(row.f1),
                "open_set_accuracy": json_f64(row.open_set_accuracy),
            }),
        );
    }
    Value::Object(map)
}

impl NoveltyReport {
    pub fn to_json(&self) -> Value {
        let per_seed: Vec<Value> = self
            .per_seed
            .iter()
            .map(|s| {
                let thresholds: Map<String, Value> = s
                    .thresholds
                    .iter()
                    .map(|(m, d)| (m.as_str().to_owned(), json_f64(*d)))
                    .collect();
                json!({
                    "seed": s.seed,
                    "manifest": s.manifest,
                    "calibration_size": s.calibration_size,
                    "evaluation_size": s.evaluation_size,
                    "thresholds": thresholds,
                    "measures": metrics_json(&s.metrics),
                })
            })
            .collect();
        json!({
            "manifest": self.manifest,
            "calibration": {
                "split": "observed",
                "fraction": self.calibration_fraction,
                "objective": "max_f1",
            },
            "evaluated_on": "observed minus calibration slice",
            "measures": metrics_json(&self.metrics),
            "per_seed": per_seed,
        })
    }
}

/// Scores the observed set with every measure, calibrates the threshold on
/// a seeded withheld slice, and evaluates on the rest.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<(NoveltyReport, Outputs), CliError> {
    let results: Vec<(SeedNovelty, Outputs)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut out = Outputs::default();
            Ok((run_seed(cfg, seed, &mut out)?, out))
        })
        .collect::<Result<_, CliError>>()?;
    let mut outputs = Outputs::default();
    let mut per_seed = Vec::new();
    for (s, out) in results {
        outputs.merge(out);
        per_seed.push(s);
    }
    let n = per_seed.len() as f64;
    let metrics = cfg
        .measures
        .iter()
        .map(|&m| {
            let mean = |f: fn(&MeasureMetrics) -> f64| {
                per_seed.iter().map(|s| f(&s.metrics[&m])).sum::<f64>() / n
            };
            (
                m,
                MeasureMetrics {
                    auroc: mean(|r| r.auroc),
                    aupr: mean(|r| r.aupr),
                    f1: mean(|r| r.f1),
                    open_set_accuracy: mean(|r| r.open_set_accuracy),
                },
            )
        })
        .collect();
    let report = NoveltyReport {
        manifest: cfg.manifest_hash(&cfg.seeds),
        calibration_fraction: cfg.calibration_fraction,
        metrics,
        per_seed,
    };
    outputs.add("novelty_report.json", json_bytes(&report.to_json()));
    Ok((report, outputs))
}
