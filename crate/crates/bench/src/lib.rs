//! Workloads shared by the criterion benches.

use osal_core::{generate_mixture, DatasetSplit, MixtureConfig};

/// Separable synthetic dataset with `n_classes` classes of `per_class` points.
pub fn workload(n_classes: usize, per_class: usize, dim: usize, seed: u64) -> DatasetSplit {
    generate_mixture(&MixtureConfig {
        n_classes,
        per_class_count: per_class,
        dim,
        ..MixtureConfig::separable(seed)
    })
    .expect("valid benchmark config")
}
