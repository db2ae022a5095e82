//! Experiment configuration: a flat TOML file, overridden by `OSAL_*`
//! environment variables, overridden in turn by command-line flags.

use std::path::{Path, PathBuf};

use osal_core::io::FileFormat;
use osal_core::{KernelParams, MixtureConfig, NeighborLimit, NoveltyMeasure, StrategyKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "OSAL_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Separable,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding `train`, `observed` and `test` embedding files. When
    /// unset, every seed generates its own synthetic dataset.
    pub data: Option<PathBuf>,
    pub preset: Preset,
    pub n_classes: Option<usize>,
    pub dim: Option<usize>,
    pub per_class_count: Option<usize>,
    pub class_center_spread: Option<f64>,
    pub within_class_std: Option<f64>,
    pub fraction_known: Option<f64>,
    pub train_fraction: Option<f64>,
    /// Format written by `gen`.
    pub format: FileFormat,

    pub sigma: f64,
    pub neighbor_limit: NeighborLimit,
    pub measures: Vec<NoveltyMeasure>,
    /// Share of the observed set withheld for threshold calibration.
    pub calibration_fraction: f64,

    pub strategies: Vec<StrategyKind>,
    /// Fractions of the observed set.
    pub budgets: Vec<f64>,
    pub eval_every: Option<usize>,

    pub k_candidates: Option<Vec<usize>>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub recall_ms: Vec<usize>,

    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            preset: Preset::Separable,
            n_classes: None,
            dim: None,
            per_class_count: None,
            class_center_spread: None,
            within_class_std: None,
            fraction_known: None,
            train_fraction: None,
            format: FileFormat::Csv,
            sigma: 10.0,
            neighbor_limit: NeighborLimit::All,
            measures: NoveltyMeasure::ALL.to_vec(),
            calibration_fraction: 0.2,
            strategies: StrategyKind::ALL.to_vec(),
            budgets: vec![0.02, 0.05, 0.1],
            eval_every: None,
            k_candidates: None,
            kmeans_restarts: 5,
            kmeans_max_iter: 300,
            recall_ms: vec![1, 2, 4, 8],
            seeds: (0..5).collect(),
            out: PathBuf::from("osal-out"),
        }
    }
}

/// Values given on the command line; they win over file and environment.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `env` overrides and then `flags`.
    pub fn load<I>(path: Option<&Path>, env: I, flags: &FlagOverrides) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table()) {
            return Err(CliError::Config(format!(
                "`{key}`: nested tables are not supported"
            )));
        }
        for (name, raw) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                table.insert(key.to_ascii_lowercase(), env_value(&raw));
            }
        }
        if let Some(seed) = flags.seed {
            let seed = i64::try_from(seed)
                .map_err(|_| CliError::Config(format!("seed {seed} is too large")))?;
            table.insert("seeds".into(), Value::Array(vec![Value::Integer(seed)]));
        }
        if let Some(out) = &flags.out {
            table.insert(
                "out".into(),
                Value::String(out.to_string_lossy().into_owned()),
            );
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.kernel_params()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.measures.is_empty() {
            return bad("measures must not be empty".into());
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        if self.budgets.is_empty() {
            return bad("budgets must not be empty".into());
        }
        if let Some(b) = self.budgets.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return bad(format!("budget {b} is outside [0, 1]"));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return bad("calibration_fraction must be in (0, 1)".into());
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 {
            return bad("kmeans_restarts and kmeans_max_iter must be positive".into());
        }
        if self.recall_ms.is_empty() || self.recall_ms.contains(&0) {
            return bad("recall_ms must be non-empty positive integers".into());
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be positive".into());
        }
        if self.data.is_none() {
            self.mixture(0)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn kernel_params(&self) -> osal_core::Result<KernelParams> {
        let p = KernelParams::new(self.sigma)?.with_neighbor_limit(self.neighbor_limit);
        p.validate()?;
        Ok(p)
    }

    /// The synthetic generator settings for `seed`.
    pub fn mixture(&self, seed: u64) -> MixtureConfig {
        let base = match self.preset {
            Preset::Separable => MixtureConfig::separable(seed),
            Preset::Hard => MixtureConfig::hard(seed),
        };
        MixtureConfig {
            n_classes: self.n_classes.unwrap_or(base.n_classes),
            dim: self.dim.unwrap_or(base.dim),
            per_class_count: self.per_class_count.unwrap_or(base.per_class_count),
            class_center_spread: self.class_center_spread.unwrap_or(base.class_center_spread),
            within_class_std: self.within_class_std.unwrap_or(base.within_class_std),
            fraction_known: self.fraction_known.unwrap_or(base.fraction_known),
            train_fraction: self.train_fraction.unwrap_or(base.train_fraction),
            seed,
        }
    }

    /// SHA-256 over the configuration (without `out`) restricted to `seeds`.
    pub fn manifest_hash(&self, seeds: &[u64]) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        let map = v.as_object_mut().expect("config is an object");
        map.remove("out");
        map.insert("seeds".into(), serde_json::json!(seeds));
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// Environment values are read as TOML values when they parse as one
/// (`5`, `[0.1, 0.2]`, `"x"`), otherwise as plain strings.
fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}
