use osal_core::io::{write_labeled_set, write_pool, SplitTag};
use osal_core::{generate_mixture, DatasetSplit};
use rayon::prelude::*;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::{json_bytes, manifest_comment, Outputs};
use crate::error::CliError;

pub fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

/// One directory per seed with the three split files and `manifest.json`.
pub fn run(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    if cfg.data.is_some() {
        return Err(CliError::Config(
            "gen writes synthetic data; unset `data`".into(),
        ));
    }
    let splits: Vec<(u64, DatasetSplit)> = cfg
        .seeds
        .par_iter()
        .map(|&s| Ok((s, generate_mixture(&cfg.mixture(s))?)))
        .collect::<Result<_, CliError>>()?;
    let mut out = Outputs::default();
    let ext = cfg.format.extension();
    for (seed, split) in &splits {
        let hash = cfg.manifest_hash(&[*seed]);
        let comments = manifest_comment(&hash);
        let dir = seed_dir(*seed);
        out.add(
            format!("{dir}/train.{ext}"),
            write_labeled_set(&split.train, SplitTag::Train, cfg.format, &comments),
        );
        out.add(
            format!("{dir}/observed.{ext}"),
            write_pool(&split.observed, SplitTag::Observed, cfg.format, &comments),
        );
        out.add(
            format!("{dir}/test.{ext}"),
            write_pool(&split.test, SplitTag::Test, cfg.format, &comments),
        );
        let manifest = json!({
            "manifest": hash,
            "seed": seed,
            "generator": cfg.mixture(*seed),
            "counts": {
                "train": split.train.len(),
                "observed": split.observed.len(),
                "test": split.test.len(),
            },
            "known_classes": split.known_classes,
            "novel_classes": split.novel_classes,
        });
        out.add(format!("{dir}/manifest.json"), json_bytes(&manifest));
    }
    Ok(out)
}
