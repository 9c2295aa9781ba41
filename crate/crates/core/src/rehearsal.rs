//! Pseudo-rehearsal: regenerating labeled feature vectors from stored clusters.
//!
//! Every cluster is treated as a Gaussian `N(centroid, covariance + λI)` with
//! `λ = ridge * mean(diag(covariance))`; clusters absorbed from a single vector use
//! `λ = 0` and replay their centroid exactly.
//!
//! In standard mode cluster `i` of a class yields exactly its stored count of samples. In
//! few-shot mode every class yields a fixed number of samples, split over its clusters in
//! proportion to their counts by largest-remainder rounding.
//!
//! Each (class, cluster) pair draws from its own stream seeded by
//! `derive(seed, [class, cluster])`, so the output does not depend on iteration order or
//! on how classes are scheduled across threads.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, Covariance};
use crate::dataset::{FeatureDataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::memory::MemoryStore;
use crate::seed;

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_FSIL_PER_CLASS: usize = 40;

/// Eigenvalues above `-EIGEN_TOLERANCE * max|eigenvalue|` are treated as rounding noise
/// and clamped to zero; anything lower is reported as an error.
const EIGEN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RehearsalMode {
    Standard,
    Fsil,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RehearsalPlan {
    pub mode: RehearsalMode,
    pub fsil_per_class: usize,
    pub seed: u64,
    pub ridge: f64,
}

impl RehearsalPlan {
    pub fn standard(seed: u64) -> Self {
        Self {
            mode: RehearsalMode::Standard,
            fsil_per_class: DEFAULT_FSIL_PER_CLASS,
            seed,
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn fsil(fsil_per_class: usize, seed: u64) -> Self {
        Self {
            mode: RehearsalMode::Fsil,
            fsil_per_class,
            seed,
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Generated vectors keyed by class id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoExemplarSet {
    pub per_class: BTreeMap<u32, Vec<Vec<f32>>>,
}

impl PseudoExemplarSet {
    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = FeatureRecord> + '_ {
        self.per_class
            .iter()
            .flat_map(|(&label, vs)| vs.iter().map(move |v| FeatureRecord::new(label, v.clone())))
    }
}

/// Precomputed factor `L` with `L L^T = covariance + λI`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: Vec<f64>,
    factor: Factor,
}

#[derive(Debug, Clone)]
enum Factor {
    /// Zero covariance: every draw is the mean.
    Point,
    /// Per-coordinate standard deviations.
    Diagonal(Vec<f64>),
    /// Dense `dim x dim` factor (column-major, as stored by nalgebra).
    Dense(DMatrix<f64>),
}

impl GaussianSampler {
    pub fn new(cluster: &Cluster, ridge: f64) -> Result<Self> {
        let dim = cluster.dim();
        let mean: Vec<f64> = cluster.centroid.iter().map(|&x| x as f64).collect();
        let diag = cluster.covariance.diagonal(dim);
        if let Some(&v) = diag.iter().find(|&&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: v as f64,
            });
        }
        let lambda = if cluster.count <= 1 {
            0.0
        } else {
            ridge * diag.iter().map(|&v| v as f64).sum::<f64>() / dim as f64
        };
        if cluster.covariance.is_zero() && lambda == 0.0 {
            return Ok(Self {
                mean,
                factor: Factor::Point,
            });
        }

        let factor = match &cluster.covariance {
            Covariance::Diagonal(d) => {
                Factor::Diagonal(d.iter().map(|&v| (v as f64 + lambda).sqrt()).collect())
            }
            Covariance::Full(m) => {
                let mut a = DMatrix::<f64>::from_fn(dim, dim, |i, j| {
                    0.5 * (m[i * dim + j] as f64 + m[j * dim + i] as f64)
                });
                for i in 0..dim {
                    a[(i, i)] += lambda;
                }
                Factor::Dense(symmetric_factor(a)?)
            }
        };
        Ok(Self { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f32>> {
        let dim = self.dim();
        let mut z = vec![0.0f64; dim];
        (0..n)
            .map(|_| match &self.factor {
                Factor::Point => self.mean.iter().map(|&m| m as f32).collect(),
                Factor::Diagonal(sd) => self
                    .mean
                    .iter()
                    .zip(sd)
                    .map(|(&m, &s)| {
                        let e: f64 = StandardNormal.sample(rng);
                        (m + s * e) as f32
                    })
                    .collect(),
                Factor::Dense(l) => {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(rng);
                    }
                    (0..dim)
                        .map(|i| {
                            let row: f64 = (0..dim).map(|j| l[(i, j)] * z[j]).sum();
                            (self.mean[i] + row) as f32
                        })
                        .collect()
                }
            })
            .collect()
    }
}

/// Cholesky when the matrix is positive definite, otherwise `V sqrt(max(Λ, 0))` from a
/// symmetric eigendecomposition.
fn symmetric_factor(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(a);
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -EIGEN_TOLERANCE * max_abs {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    let mut factor = eig.eigenvectors;
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// Draws `n` pseudo-exemplars from one cluster with the default ridge.
pub fn sample_cluster(cluster: &Cluster, n: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let sampler = GaussianSampler::new(cluster, DEFAULT_RIDGE)?;
    Ok(sampler.sample(&mut seed::rng(seed), n))
}

/// Splits `total` over `weights` proportionally; remainders go to the largest fractional
/// parts, ties to the lowest index.
pub fn largest_remainder(total: usize, weights: &[u64]) -> Vec<usize> {
    let sum: u64 = weights.iter().sum();
    if weights.is_empty() || sum == 0 {
        return vec![0; weights.len()];
    }
    let total_u = total as u128;
    let sum_u = sum as u128;
    let mut alloc: Vec<usize> = weights
        .iter()
        .map(|&w| (total_u * w as u128 / sum_u) as usize)
        .collect();
    let given: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Remainder of w * total / sum is (w * total) mod sum; compare exactly.
    order.sort_by(|&a, &b| {
        let ra = (total_u * weights[a] as u128) % sum_u;
        let rb = (total_u * weights[b] as u128) % sum_u;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - given) {
        alloc[i] += 1;
    }
    alloc
}

/// Number of samples drawn from each cluster of `class` under `plan`.
pub fn cluster_allocation(class: &[Cluster], plan: &RehearsalPlan) -> Vec<usize> {
    match plan.mode {
        RehearsalMode::Standard => class.iter().map(|c| c.count as usize).collect(),
        RehearsalMode::Fsil => {
            let weights: Vec<u64> = class.iter().map(|c| c.count as u64).collect();
            largest_remainder(plan.fsil_per_class, &weights)
        }
    }
}

/// Generates pseudo-exemplars for `classes` from the clusters in `store`.
pub fn generate(
    store: &MemoryStore,
    plan: &RehearsalPlan,
    classes: &BTreeSet<u32>,
) -> Result<PseudoExemplarSet> {
    if plan.mode == RehearsalMode::Fsil && plan.fsil_per_class == 0 {
        return Err(Error::invalid("fsil_per_class must be at least 1"));
    }
    let memories = classes
        .iter()
        .map(|&id| store.class(id).ok_or(Error::UnknownClass(id)))
        .collect::<Result<Vec<_>>>()?;

    let per_class = memories
        .par_iter()
        .map(|memory| {
            let alloc = cluster_allocation(&memory.clusters, plan);
            let mut vectors = Vec::with_capacity(alloc.iter().sum());
            for (index, (cluster, &n)) in memory.clusters.iter().zip(&alloc).enumerate() {
                if n == 0 {
                    continue;
                }
                let sampler = GaussianSampler::new(cluster, plan.ridge)?;
                let mut rng = seed::rng_for(plan.seed, &[memory.class_id as u64, index as u64]);
                vectors.extend(sampler.sample(&mut rng, n));
            }
            Ok((memory.class_id, vectors))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(PseudoExemplarSet { per_class })
}

/// Mixes generated vectors with the new classes' real vectors and shuffles the result.
///
/// Standard mode needs real data for the new classes; few-shot mode must not have any,
/// since new classes are replayed from their clusters like old ones.
pub fn build_training_mix(
    pseudo: &PseudoExemplarSet,
    real_new: Option<&FeatureDataset>,
    mode: RehearsalMode,
    seed: u64,
) -> Result<FeatureDataset> {
    match (mode, real_new) {
        (RehearsalMode::Standard, None) => {
            return Err(Error::invalid(
                "standard rehearsal needs real vectors of the new classes",
            ))
        }
        (RehearsalMode::Fsil, Some(_)) => {
            return Err(Error::invalid(
                "few-shot rehearsal must not mix in real vectors",
            ))
        }
        _ => {}
    }
    let mut records: Vec<FeatureRecord> = pseudo.records().collect();
    if let Some(real) = real_new {
        records.extend(real.records().iter().cloned());
    }
    let dim = records
        .first()
        .map(|r| r.vector.len())
        .ok_or(Error::Empty("training mix is empty"))?;
    records.shuffle(&mut seed::rng(seed));
    FeatureDataset::new(dim, records)
}
