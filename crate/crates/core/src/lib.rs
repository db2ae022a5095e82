//! Open-set recognition and open-set active learning in a fixed embedding
//! space.
//!
//! Classification is a Gaussian-kernel vote over labelled centres
//! ([`kernel`]); novelty is scored by nearest-centre distance, posterior
//! density or posterior entropy ([`open_set`]); new classes are learned by
//! querying an oracle for the pool members with the highest unlabelled to
//! labelled density ratio ([`active_learning`]), or clustered without labels
//! ([`pseudo_label`]).

pub mod active_learning;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod kernel;
pub mod math;
pub mod open_set;
pub mod pseudo_label;
pub mod rng;
pub mod synthetic;

pub use active_learning::{
    run_active_learning, select_query, uldr_score, AlConfig, AlRun, AlTrace, LabelOracle,
    QueryStrategy, SimulatedOracle, StrategyKind,
};
pub use embedding::{
    euclidean_distance, nearest_neighbors, split_known_novel, DatasetSplit, Embedding,
    KnownAssignment, Label, LabeledEmbedding, LabeledSet, Neighbor, Truth, UnlabeledPool,
};
pub use error::{Error, Result};
pub use evaluation::{
    aupr, auroc, closed_accuracy, f1_at_threshold, open_set_accuracy, recall_at_m, MetricsReport,
};
pub use kernel::{
    class_posterior, classify, insert_center, ClassPosterior, KernelParams, NeighborLimit,
};
pub use open_set::{
    calibrate_threshold, open_set_predict, NoveltyMeasure, OpenSetPrediction, Verdict,
};
pub use pseudo_label::{
    generate_pseudo_labels, kmeans, select_k, silhouette_score, Clustering, KMeansOptions,
};
pub use synthetic::{generate_mixture, MixtureConfig};
