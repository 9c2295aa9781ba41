use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::error::Result;
use crate::memory::MemoryStore;

/// Outcome of one increment of one seed. Contains no wall-clock data, so reports are
/// byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementRecord {
    pub method: Method,
    pub seed: u64,
    pub increment: usize,
    pub new_classes: Vec<u32>,
    pub classes_seen: usize,
    /// Accuracy on the test records of every class seen so far.
    pub accuracy: f64,
    pub old_class_accuracy: Option<f64>,
    pub new_class_accuracy: Option<f64>,
    pub test_size: usize,
    pub total_clusters: usize,
    pub memory_bytes: u64,
    /// Size of the classifier's training set this increment (0 for classifier-free methods).
    pub train_size: usize,
    pub real_in_mix: usize,
    pub pseudo_in_mix: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub seed: u64,
    pub increment: usize,
    pub clustering_ms: f64,
    pub rehearsal_ms: f64,
    pub training_ms: f64,
    pub prediction_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub increments: Vec<IncrementRecord>,
    #[serde(skip)]
    pub timings: Vec<PhaseTimings>,
    /// Cluster memory after the last increment; empty for methods that keep none.
    #[serde(skip)]
    pub final_store: Option<MemoryStore>,
}

impl SeedRun {
    /// Mean of the per-increment accuracies.
    pub fn average_incremental_accuracy(&self) -> f64 {
        mean(
            &self
                .increments
                .iter()
                .map(|r| r.accuracy)
                .collect::<Vec<_>>(),
        )
    }

    pub fn final_accuracy(&self) -> f64 {
        self.increments.last().map_or(f64::NAN, |r| r.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub increments: usize,
    pub per_seed_average: Vec<f64>,
    pub mean_average_incremental_accuracy: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std_average_incremental_accuracy: f64,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
    pub per_increment_mean_accuracy: Vec<f64>,
}

impl Summary {
    pub fn from_runs(method: Method, runs: &[SeedRun]) -> Self {
        let per_seed_average: Vec<f64> = runs
            .iter()
            .map(SeedRun::average_incremental_accuracy)
            .collect();
        let finals: Vec<f64> = runs.iter().map(SeedRun::final_accuracy).collect();
        let increments = runs.first().map_or(0, |r| r.increments.len());
        let per_increment_mean_accuracy = (0..increments)
            .map(|i| {
                mean(
                    &runs
                        .iter()
                        .map(|r| r.increments[i].accuracy)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        Self {
            method,
            seeds: runs.iter().map(|r| r.seed).collect(),
            increments,
            mean_average_incremental_accuracy: mean(&per_seed_average),
            std_average_incremental_accuracy: sample_std(&per_seed_average),
            mean_final_accuracy: mean(&finals),
            std_final_accuracy: sample_std(&finals),
            per_seed_average,
            per_increment_mean_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<'a> {
    Config(&'a ExperimentConfig),
    Increment(&'a IncrementRecord),
    Summary(&'a Summary),
    Timing(&'a PhaseTimings),
}

impl RunReport {
    pub fn new(config: ExperimentConfig, runs: Vec<SeedRun>) -> Self {
        let summary = Summary::from_runs(config.method, &runs);
        Self {
            config,
            runs,
            summary,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &IncrementRecord> {
        self.runs.iter().flat_map(|r| &r.increments)
    }

    /// One JSON object per line: the config, every increment record, then the summary.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        write_line(w, &Line::Config(&self.config))?;
        for r in self.records() {
            write_line(w, &Line::Increment(r))?;
        }
        write_line(w, &Line::Summary(&self.summary))
    }

    /// Wall-clock phase timings, kept apart from the deterministic report.
    pub fn write_timings_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for t in self.runs.iter().flat_map(|r| &r.timings) {
            write_line(w, &Line::Timing(t))?;
        }
        Ok(())
    }
}

pub(crate) fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
