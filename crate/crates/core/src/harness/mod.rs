//! Incremental experiment runner, synthetic data, and the budget and timing studies.

pub mod config;
pub mod demo;
pub mod experiment;
pub mod report;
pub mod schedule;
pub mod sweep;
pub mod synthetic;
pub mod timing;

pub use config::{parse_seeds, ExperimentConfig, Method, Shots, TrainingSchedule};
pub use demo::{run_pseudo_demo, ClassDiscrepancy, PseudoDemo};
pub use experiment::{
    run_experiment, run_seed, AccessContext, AccessLog, ClassSource, DatasetSource, LoggingSource,
};
pub use report::{IncrementRecord, PhaseTimings, RunReport, SeedRun, Summary};
pub use schedule::IncrementSchedule;
pub use sweep::{run_budget_sweep, write_sweep_jsonl, BudgetPoint};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use timing::{
    fit_slope, run_timing_bench, synthetic_store, SlopeFit, TimingConfig, TimingPoint,
};

/// Stream tags passed to [`crate::seed::derive`] so each random consumer gets its own stream.
pub(crate) mod streams {
    pub const CLASS_ORDER: u64 = 1;
    pub const REHEARSAL: u64 = 2;
    pub const MIX: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const INIT: u64 = 5;
    pub const STORE: u64 = 6;
    pub const KMEANS: u64 = 7;
}
