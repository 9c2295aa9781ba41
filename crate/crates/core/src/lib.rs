//! Class-incremental learning in feature space.
//!
//! Each new class is summarized by Agg-Var clustering into centroids, counts, and
//! covariances ([`aggvar`]), kept in a budgeted [`memory::MemoryStore`], and replayed as
//! Gaussian pseudo-exemplars ([`rehearsal`]) to retrain a linear softmax classifier
//! ([`classifier`]) without revisiting old training data. Centroid voting and
//! nearest-class-mean predictors ([`voting`]) serve as baselines, and [`harness`] runs
//! whole incremental experiments.

pub mod aggvar;
pub mod classifier;
pub mod cluster;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod harness;
pub mod kmeans;
pub mod memory;
pub mod rehearsal;
pub mod seed;
pub mod voting;

pub use aggvar::{cluster_class, AggVarOutput};
pub use classifier::{LinearClassifier, TrainConfig};
pub use cluster::{Cluster, Covariance, CovarianceMode};
pub use dataset::{
    read_dataset, split_by_class, write_dataset, FeatureDataset, FeatureRecord, FileFormat,
};
pub use error::{Error, Result};
pub use eval::{evaluate, Evaluation, Predictor};
pub use kmeans::kmeans_class;
pub use memory::{Budget, ClassMemory, MemoryStore, MergeCovariance, ReductionPolicy};
pub use rehearsal::{
    build_training_mix, generate, sample_cluster, PseudoExemplarSet, RehearsalMode, RehearsalPlan,
};
pub use voting::{predict_ncm, predict_voting, NcmPredictor, VotingConfig, VotingPredictor};
