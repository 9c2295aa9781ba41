use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::report::{IncrementRecord, PhaseTimings, RunReport, SeedRun};
use super::schedule::IncrementSchedule;
use super::streams;
use crate::aggvar::cluster_class;
use crate::classifier::LinearClassifier;
use crate::cluster::Cluster;
use crate::dataset::{split_by_class, FeatureDataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Predictor};
use crate::kmeans::kmeans_class;
use crate::memory::MemoryStore;
use crate::rehearsal::{build_training_mix, generate, RehearsalMode, RehearsalPlan};
use crate::seed;
use crate::voting::{NcmPredictor, VotingPredictor};

/// Where the runner reads training vectors from, one class at a time.
pub trait ClassSource: Sync {
    fn dim(&self) -> usize;
    fn class_ids(&self) -> BTreeSet<u32>;
    fn class_records(&self, class_id: u32, ctx: AccessContext) -> Result<&[FeatureRecord]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AccessContext {
    pub seed: u64,
    pub increment: usize,
}

/// Training data grouped by class, in file order within each class.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    dim: usize,
    by_class: BTreeMap<u32, Vec<FeatureRecord>>,
}

impl DatasetSource {
    pub fn new(train: &FeatureDataset) -> Self {
        Self {
            dim: train.dim(),
            by_class: split_by_class(train),
        }
    }
}

impl ClassSource for DatasetSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn class_ids(&self) -> BTreeSet<u32> {
        self.by_class.keys().copied().collect()
    }

    fn class_records(&self, class_id: u32, _ctx: AccessContext) -> Result<&[FeatureRecord]> {
        self.by_class
            .get(&class_id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClass(class_id))
    }
}

pub type AccessLog = Vec<(AccessContext, u32)>;

/// Wraps a source and records every class read.
#[derive(Debug)]
pub struct LoggingSource<S> {
    inner: S,
    log: Mutex<AccessLog>,
}

impl<S> LoggingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Accesses sorted by (seed, increment, class).
    pub fn accesses(&self) -> AccessLog {
        let mut log = self.log.lock().expect("access log poisoned").clone();
        log.sort();
        log
    }
}

impl<S: ClassSource> ClassSource for LoggingSource<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn class_ids(&self) -> BTreeSet<u32> {
        self.inner.class_ids()
    }

    fn class_records(&self, class_id: u32, ctx: AccessContext) -> Result<&[FeatureRecord]> {
        self.log
            .lock()
            .expect("access log poisoned")
            .push((ctx, class_id));
        self.inner.class_records(class_id, ctx)
    }
}

/// Classifier whose output rows are classes in arrival order.
struct RowClassifier<'a> {
    clf: &'a LinearClassifier,
    rows: &'a [u32],
}

impl Predictor for RowClassifier<'_> {
    fn predict(&self, vector: &[f32]) -> Result<u32> {
        Ok(self.rows[self.clf.predict(vector)? as usize])
    }
}

fn relabel(
    records: impl IntoIterator<Item = FeatureRecord>,
    row_of: &BTreeMap<u32, u32>,
) -> Vec<FeatureRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.label = row_of[&r.label];
            r
        })
        .collect()
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs every configured seed (in parallel) and summarizes them.
pub fn run_experiment<S: ClassSource>(
    config: &ExperimentConfig,
    source: &S,
    test: &FeatureDataset,
) -> Result<RunReport> {
    config.validate()?;
    let runs = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, source, test, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport::new(config.clone(), runs))
}

/// Runs one seed of the incremental protocol.
///
/// At increment `i` only the classes introduced at `i` are read from `source`, except by
/// the batch baseline, which re-reads every class seen so far.
pub fn run_seed<S: ClassSource + ?Sized>(
    config: &ExperimentConfig,
    source: &S,
    test: &FeatureDataset,
    seed: u64,
) -> Result<SeedRun> {
    config.validate()?;
    let dim = source.dim();
    if test.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: test.dim(),
        });
    }
    let schedule = IncrementSchedule::new(
        source.class_ids(),
        config.classes_per_increment,
        config.shots,
        seed,
    )?;
    let mut state = SeedState {
        config,
        seed,
        dim,
        store: MemoryStore::new(config.covariance_mode(), config.budget)
            .with_policy(config.reduction)
            .with_seed(seed::derive(seed, &[streams::STORE])),
        rows: Vec::new(),
        row_of: BTreeMap::new(),
        classifier: None,
    };

    let mut increments = Vec::with_capacity(schedule.num_increments());
    let mut timings = Vec::with_capacity(schedule.num_increments());
    for (i, new_classes) in schedule.increments().enumerate() {
        let (record, timing) =
            state
                .step(source, test, i, new_classes)
                .map_err(|e| Error::Increment {
                    increment: i,
                    source: Box::new(e),
                })?;
        increments.push(record);
        timings.push(timing);
    }
    Ok(SeedRun {
        seed,
        increments,
        timings,
        final_store: config.method.uses_memory().then_some(state.store),
    })
}

struct SeedState<'c> {
    config: &'c ExperimentConfig,
    seed: u64,
    dim: usize,
    store: MemoryStore,
    /// Class id of each classifier row.
    rows: Vec<u32>,
    row_of: BTreeMap<u32, u32>,
    classifier: Option<LinearClassifier>,
}

struct Trained {
    train_size: usize,
    real: usize,
    pseudo: usize,
    loss: f64,
    rehearsal_ms: f64,
}

impl SeedState<'_> {
    fn step<S: ClassSource + ?Sized>(
        &mut self,
        source: &S,
        test: &FeatureDataset,
        increment: usize,
        new_classes: &[u32],
    ) -> Result<(IncrementRecord, PhaseTimings)> {
        let cfg = self.config;
        let method = cfg.method;
        let ctx = AccessContext {
            seed: self.seed,
            increment,
        };
        let old: BTreeSet<u32> = self.rows.iter().copied().collect();
        let mut new_real: BTreeMap<u32, Vec<FeatureRecord>> = BTreeMap::new();
        for &c in new_classes {
            let all = source.class_records(c, ctx)?;
            if all.is_empty() {
                return Err(Error::Empty("class has no training records"));
            }
            new_real.insert(c, all[..cfg.shots.take(all.len())].to_vec());
        }
        for &c in new_classes {
            self.row_of.insert(c, self.rows.len() as u32);
            self.rows.push(c);
        }

        let t = Instant::now();
        if method.uses_memory() {
            for (&c, records) in &new_real {
                let clusters = self.summarize(c, records)?;
                self.store.absorb(c, clusters, records.len() as u64)?;
            }
        }
        let clustering_ms = ms(t);

        let t = Instant::now();
        let trained = match method {
            Method::CbclPr | Method::CbclPrDiag | Method::KmeansPr => {
                Some(self.train_rehearsal(increment, &old, &new_real)?)
            }
            Method::Ft => Some(self.train_finetune(increment, &new_real)?),
            Method::Flb => Some(self.train_batch(source, ctx)?),
            Method::Cbcl | Method::Kmeans | Method::Ncm => None,
        };
        let training_ms = ms(t) - trained.as_ref().map_or(0.0, |t| t.rehearsal_ms);

        let seen: BTreeSet<u32> = self.rows.iter().copied().collect();
        let subset = test
            .filter_classes(&seen)
            .ok_or(Error::Empty("no test records for the classes seen so far"))?;
        let t = Instant::now();
        let eval = match method {
            Method::Cbcl | Method::Kmeans => evaluate(
                &VotingPredictor {
                    store: &self.store,
                    config: cfg.voting,
                },
                &subset,
            )?,
            Method::Ncm => evaluate(&NcmPredictor::new(&self.store)?, &subset)?,
            _ => evaluate(
                &RowClassifier {
                    clf: self.classifier.as_ref().expect("trained this increment"),
                    rows: &self.rows,
                },
                &subset,
            )?,
        };
        let prediction_ms = ms(t);

        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for r in subset.records() {
            *counts.entry(r.label).or_default() += 1;
        }
        let new_set: BTreeSet<u32> = new_classes.iter().copied().collect();
        let record = IncrementRecord {
            method,
            seed: self.seed,
            increment,
            new_classes: new_classes.to_vec(),
            classes_seen: self.rows.len(),
            accuracy: eval.accuracy,
            old_class_accuracy: eval.subset_accuracy(&counts, |c| old.contains(&c)),
            new_class_accuracy: eval.subset_accuracy(&counts, |c| new_set.contains(&c)),
            test_size: subset.len(),
            total_clusters: self.store.total_clusters(),
            memory_bytes: self.store.memory_bytes(),
            train_size: trained.as_ref().map_or(0, |t| t.train_size),
            real_in_mix: trained.as_ref().map_or(0, |t| t.real),
            pseudo_in_mix: trained.as_ref().map_or(0, |t| t.pseudo),
            final_loss: trained.as_ref().map(|t| t.loss),
        };
        let timing = PhaseTimings {
            seed: self.seed,
            increment,
            clustering_ms,
            rehearsal_ms: trained.as_ref().map_or(0.0, |t| t.rehearsal_ms),
            training_ms,
            prediction_ms,
        };
        Ok((record, timing))
    }

    fn summarize(&self, class_id: u32, records: &[FeatureRecord]) -> Result<Vec<Cluster>> {
        let cfg = self.config;
        let mode = cfg.covariance_mode();
        let aggvar = || cluster_class(records, cfg.distance_threshold, mode);
        if !cfg.method.uses_kmeans() {
            return Ok(aggvar()?.clusters);
        }
        let k = match cfg.kmeans_k {
            Some(k) => k,
            None => aggvar()?.clusters.len(),
        };
        let s = seed::derive(self.seed, &[streams::KMEANS, class_id as u64]);
        kmeans_class(records, k.min(records.len()), s, mode)
    }

    fn fresh_classifier(&self, increment: usize) -> Result<LinearClassifier> {
        LinearClassifier::new(
            self.dim,
            self.rows.len(),
            self.config.training.bias,
            seed::derive(self.seed, &[streams::INIT, increment as u64]),
        )
    }

    fn train_rehearsal(
        &mut self,
        increment: usize,
        old: &BTreeSet<u32>,
        new_real: &BTreeMap<u32, Vec<FeatureRecord>>,
    ) -> Result<Trained> {
        let cfg = self.config;
        let t = Instant::now();
        let rehearsal_seed = seed::derive(self.seed, &[streams::REHEARSAL, increment as u64]);
        let mix_seed = seed::derive(self.seed, &[streams::MIX, increment as u64]);
        let (mix, real, pseudo) = if cfg.shots.is_few() {
            let mut plan = RehearsalPlan::fsil(cfg.fsil_per_class, rehearsal_seed);
            plan.ridge = cfg.ridge;
            let seen: BTreeSet<u32> = self.rows.iter().copied().collect();
            let set = generate(&self.store, &plan, &seen)?;
            let n = set.len();
            (
                build_training_mix(&set, None, RehearsalMode::Fsil, mix_seed)?,
                0,
                n,
            )
        } else {
            let mut plan = RehearsalPlan::standard(rehearsal_seed);
            plan.ridge = cfg.ridge;
            let set = generate(&self.store, &plan, old)?;
            let real_records: Vec<FeatureRecord> = new_real.values().flatten().cloned().collect();
            let real_n = real_records.len();
            let real = FeatureDataset::new(self.dim, real_records)?;
            let n = set.len();
            (
                build_training_mix(&set, Some(&real), RehearsalMode::Standard, mix_seed)?,
                real_n,
                n,
            )
        };
        let rehearsal_ms = ms(t);

        let mix = FeatureDataset::new(self.dim, relabel(mix.into_records(), &self.row_of))?;
        let mut clf = self.fresh_classifier(increment)?;
        let loss = clf.train(
            &mix,
            &cfg.training.replay(
                increment,
                seed::derive(self.seed, &[streams::TRAIN, increment as u64]),
            ),
        )?;
        self.classifier = Some(clf);
        Ok(Trained {
            train_size: mix.len(),
            real,
            pseudo,
            loss,
            rehearsal_ms,
        })
    }

    fn train_finetune(
        &mut self,
        increment: usize,
        new_real: &BTreeMap<u32, Vec<FeatureRecord>>,
    ) -> Result<Trained> {
        let cfg = self.config;
        let records = relabel(new_real.values().flatten().cloned(), &self.row_of);
        let data = FeatureDataset::new(self.dim, records)?;
        let mut clf = match self.classifier.take() {
            Some(mut c) => {
                c.grow(self.rows.len())?;
                c
            }
            None => self.fresh_classifier(increment)?,
        };
        let loss = clf.train(
            &data,
            &cfg.training.replay(
                increment,
                seed::derive(self.seed, &[streams::TRAIN, increment as u64]),
            ),
        )?;
        self.classifier = Some(clf);
        Ok(Trained {
            train_size: data.len(),
            real: data.len(),
            pseudo: 0,
            loss,
            rehearsal_ms: 0.0,
        })
    }

    fn train_batch<S: ClassSource + ?Sized>(
        &mut self,
        source: &S,
        ctx: AccessContext,
    ) -> Result<Trained> {
        let cfg = self.config;
        let mut records = Vec::new();
        for &c in &self.rows {
            let all = source.class_records(c, ctx)?;
            records.extend_from_slice(&all[..cfg.shots.take(all.len())]);
        }
        let data = FeatureDataset::new(self.dim, relabel(records, &self.row_of))?;
        let mut clf = self.fresh_classifier(ctx.increment)?;
        let loss = clf.train(
            &data,
            &cfg.training.batch_baseline(
                ctx.increment,
                seed::derive(self.seed, &[streams::TRAIN, ctx.increment as u64]),
            ),
        )?;
        self.classifier = Some(clf);
        Ok(Trained {
            train_size: data.len(),
            real: data.len(),
            pseudo: 0,
            loss,
            rehearsal_ms: 0.0,
        })
    }
}
