use osal_core::evaluation::recall_at_ms;
use osal_core::generate_pseudo_labels;
use osal_core::io::{json_f64, write_pseudo_labels};
use osal_core::pseudo_label::{default_k_candidates, KMeansOptions, PseudoLabels};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::data::{json_bytes, load_split, manifest_comment, Outputs};
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct SeedPseudo {
    pub seed: u64,
    pub manifest: String,
    pub true_novel_classes: usize,
    pub pseudo: PseudoLabels,
    /// `(m, recall)` over the novel members of the test set.
    pub recall: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct PseudoReport {
    pub manifest: String,
    pub per_seed: Vec<SeedPseudo>,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedPseudo, String), CliError> {
    let split = load_split(cfg, seed)?;
    let candidates = cfg
        .k_candidates
        .clone()
        .unwrap_or_else(|| default_k_candidates(split.observed.len()));
    let opts = KMeansOptions {
        max_iter: cfg.kmeans_max_iter,
        restarts: cfg.kmeans_restarts,
        ..KMeansOptions::default()
    };
    let pseudo = generate_pseudo_labels(
        &split.observed,
        &split.known_classes,
        &candidates,
        seed,
        &opts,
    )?;

    let (points, labels): (Vec<&[f64]>, Vec<_>) = split
        .test
        .members()
        .iter()
        .zip(split.test.hidden_truth())
        .filter(|(_, t)| t.is_novel)
        .map(|(e, t)| (e.vector(), t.label))
        .unzip();
    let queries: Vec<usize> = (0..points.len()).collect();
    let recall = recall_at_ms(&points, &labels, &queries, &cfg.recall_ms)
        .map_err(|e| CliError::Data(format!("recall on the novel test members: {e}")))?;

    let hash = cfg.manifest_hash(&[seed]);
    let file = write_pseudo_labels(
        split
            .observed
            .members()
            .iter()
            .map(|e| e.id())
            .zip(pseudo.labels.iter().copied()),
        &manifest_comment(&hash),
    );
    Ok((
        SeedPseudo {
            seed,
            manifest: hash,
            true_novel_classes: split.novel_classes.len(),
            pseudo,
            recall: cfg.recall_ms.iter().copied().zip(recall).collect(),
        },
        file,
    ))
}

impl PseudoReport {
    pub fn to_json(&self) -> Value {
        let per_seed: Vec<Value> = self
            .per_seed
            .iter()
            .map(|s| {
                let recall: Map<String, Value> = s
                    .recall
                    .iter()
                    .map(|(m, r)| (format!("R@{m}"), json_f64(*r)))
                    .collect();
                let by_k: Vec<Value> = s
                    .pseudo
                    .selection
                    .scores
                    .iter()
                    .map(|(k, sil)| json!({"k": k, "silhouette": json_f64(*sil)}))
                    .collect();
                json!({
                    "seed": s.seed,
                    "manifest": s.manifest,
                    "k": s.pseudo.k,
                    "silhouette": json_f64(s.pseudo.silhouette),
                    "label_offset": s.pseudo.offset,
                    "true_novel_classes": s.true_novel_classes,
                    "silhouette_by_k": by_k,
                    "novel_recall": recall,
                })
            })
            .collect();
        json!({
            "manifest": self.manifest,
            "clustered": "observed",
            "recall_on": "novel members of test",
            "per_seed": per_seed,
        })
    }
}

/// Clusters each seed's observed pool and reports retrieval recall of the
/// fixed embedding on the novel test members.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<(PseudoReport, Outputs), CliError> {
    let results: Vec<(SeedPseudo, String)> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<_, CliError>>()?;
    let mut out = Outputs::default();
    let mut per_seed = Vec::new();
    for (s, file) in results {
        out.add(format!("pseudo_labels_seed{}.csv", s.seed), file);
        per_seed.push(s);
    }
    let report = PseudoReport {
        manifest: cfg.manifest_hash(&cfg.seeds),
        per_seed,
    };
    out.add("pseudo_report.json", json_bytes(&report.to_json()));
    Ok((report, out))
}
