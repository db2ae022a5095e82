//! Dataset loading and output collection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use osal_core::io::{parse_embedding_file, FileFormat};
use osal_core::{generate_mixture, DatasetSplit};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SPLIT_FILES: [&str; 3] = ["train", "observed", "test"];

fn find_split_file(dir: &Path, stem: &str) -> Result<(PathBuf, FileFormat), CliError> {
    for format in [FileFormat::Csv, FileFormat::Jsonl] {
        let p = dir.join(format!("{stem}.{}", format.extension()));
        if p.is_file() {
            return Ok((p, format));
        }
    }
    Err(CliError::Data(format!(
        "no {stem}.csv or {stem}.jsonl in {}",
        dir.display()
    )))
}

/// Reads `train`, `observed` and `test` from `dir`. Known classes are the
/// training classes; every other label in the pools is novel.
pub fn load_split_dir(dir: &Path) -> Result<DatasetSplit, CliError> {
    let mut parsed = Vec::new();
    for stem in SPLIT_FILES {
        let (path, format) = find_split_file(dir, stem)?;
        let bytes =
            std::fs::read(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let records = parse_embedding_file(&bytes, format)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        parsed.push(records);
    }
    let test = parsed.pop().expect("three files");
    let observed = parsed.pop().expect("three files");
    let train = parsed.pop().expect("three files").into_labeled_set()?;
    let known_classes = train.classes().clone();
    let observed = observed.into_pool(&known_classes)?;
    let test = test.into_pool(&known_classes)?;
    for (name, dim) in [("observed", observed.dim()), ("test", test.dim())] {
        if dim != train.dim() {
            return Err(CliError::Data(format!(
                "{name} has dimension {dim}, train has {}",
                train.dim()
            )));
        }
    }
    let novel_classes: BTreeSet<_> = observed
        .hidden_truth()
        .iter()
        .chain(test.hidden_truth())
        .filter(|t| t.is_novel)
        .map(|t| t.label)
        .collect();
    let mut ids = BTreeSet::new();
    let all_ids = train
        .ids()
        .chain(observed.members().iter().map(|e| e.id()))
        .chain(test.members().iter().map(|e| e.id()));
    for id in all_ids {
        if !ids.insert(id) {
            return Err(CliError::Data(format!(
                "id `{id}` appears in more than one split"
            )));
        }
    }
    Ok(DatasetSplit {
        train,
        observed,
        test,
        known_classes,
        novel_classes,
    })
}

/// The dataset used for `seed`: the configured files, or a fresh synthetic draw.
pub fn load_split(cfg: &ExperimentConfig, seed: u64) -> Result<DatasetSplit, CliError> {
    match &cfg.data {
        Some(dir) => load_split_dir(dir),
        None => Ok(generate_mixture(&cfg.mixture(seed))?),
    }
}

/// Output files keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outputs {
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Outputs {
    pub fn add(&mut self, path: impl Into<PathBuf>, content: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), content.into());
    }

    pub fn merge(&mut self, other: Outputs) {
        self.files.extend(other.files);
    }

    pub fn get(&self, path: impl AsRef<Path>) -> Option<&[u8]> {
        self.files.get(path.as_ref()).map(Vec::as_slice)
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.keys().map(PathBuf::as_path)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        for (rel, content) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| {
                    CliError::Data(format!("cannot create {}: {e}", parent.display()))
                })?;
            }
            std::fs::write(&path, content)
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// Refuses an existing non-empty directory unless `force` is set.
pub fn check_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    match std::fs::read_dir(dir).map(|mut entries| entries.next().is_some()) {
        Ok(true) => Err(CliError::Usage(format!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        ))),
        Ok(false) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(CliError::Data(format!(
            "cannot read {}: {e}",
            dir.display()
        ))),
    }
}

/// `manifest <hash>`, the comment line every CSV output starts with.
pub fn manifest_comment(hash: &str) -> Vec<String> {
    vec![format!("manifest {hash}")]
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json value serialises");
    s.push('\n');
    s.into_bytes()
}
