//! Per-query prediction latency of centroid voting versus the linear classifier as the
//! number of stored centroids grows.

use std::hint::black_box;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::classifier::LinearClassifier;
use crate::cluster::{Cluster, CovarianceMode};
use crate::error::{Error, Result};
use crate::eval::Predictor;
use crate::memory::{Budget, MemoryStore};
use crate::seed;
use crate::voting::{predict_voting, VotingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Total stored centroids per store.
    pub sizes: Vec<usize>,
    pub dim: usize,
    /// Classes the centroids are spread over; also the classifier's output count.
    pub classes: usize,
    pub queries: usize,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 500, 1000, 2000, 5000],
            dim: 512,
            classes: 100,
            queries: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub centroids: usize,
    pub voting_median_us: f64,
    pub voting_p95_us: f64,
    pub linear_median_us: f64,
    pub linear_p95_us: f64,
}

fn gaussian_vec(rng: &mut seed::Rng, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x as f32
        })
        .collect()
}

/// Store of `centroids` random diagonal clusters spread round-robin over `classes` classes.
pub fn synthetic_store(
    centroids: usize,
    classes: usize,
    dim: usize,
    seed: u64,
) -> Result<MemoryStore> {
    if classes == 0 || centroids < classes {
        return Err(Error::invalid("need at least one centroid per class"));
    }
    let mut rng = seed::rng_for(seed, &[centroids as u64]);
    let mut per_class: Vec<Vec<Cluster>> = vec![Vec::new(); classes];
    for i in 0..centroids {
        per_class[i % classes].push(Cluster::singleton(
            &gaussian_vec(&mut rng, dim),
            CovarianceMode::Diagonal,
        ));
    }
    let mut store = MemoryStore::new(CovarianceMode::Diagonal, Budget::Unlimited);
    for (id, clusters) in per_class.into_iter().enumerate() {
        let n = clusters.len() as u64;
        store.absorb(id as u32, clusters, n)?;
    }
    Ok(store)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn time_queries(
    queries: &[Vec<f32>],
    mut f: impl FnMut(&[f32]) -> Result<u32>,
) -> Result<(f64, f64)> {
    let mut us = Vec::with_capacity(queries.len());
    for q in queries {
        let t = Instant::now();
        black_box(f(black_box(q))?);
        us.push(t.elapsed().as_secs_f64() * 1e6);
    }
    us.sort_by(f64::total_cmp);
    Ok((percentile(&us, 0.5), percentile(&us, 0.95)))
}

pub fn run_timing_bench(config: &TimingConfig) -> Result<Vec<TimingPoint>> {
    if config.queries == 0 || config.dim == 0 || config.sizes.is_empty() {
        return Err(Error::invalid("queries, dim and sizes must be non-empty"));
    }
    let mut rng = seed::rng_for(config.seed, &[u64::MAX]);
    let queries: Vec<Vec<f32>> = (0..config.queries)
        .map(|_| gaussian_vec(&mut rng, config.dim))
        .collect();
    let clf = LinearClassifier::new(config.dim, config.classes, true, config.seed)?;
    let voting = VotingConfig::default();

    config
        .sizes
        .iter()
        .map(|&n| {
            let store = synthetic_store(n, config.classes, config.dim, config.seed)?;
            // Warm caches once before measuring either predictor.
            for q in queries.iter().take(10) {
                black_box(predict_voting(&store, q, &voting)?);
                black_box(clf.predict(q)?);
            }
            let (voting_median_us, voting_p95_us) =
                time_queries(&queries, |q| predict_voting(&store, q, &voting))?;
            let (linear_median_us, linear_p95_us) = time_queries(&queries, |q| clf.predict(q))?;
            Ok(TimingPoint {
                centroids: n,
                voting_median_us,
                voting_p95_us,
                linear_median_us,
                linear_p95_us,
            })
        })
        .collect()
}

/// Ordinary least-squares line with a two-sided t-test on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
    pub p_value: f64,
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(Error::invalid("need at least 3 paired points"));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("x values are all equal"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let df = nf - 2.0;
    let std_error = (sse / df / sxx).sqrt();
    let p_value = if std_error == 0.0 {
        if slope == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
        2.0 * (1.0 - t.cdf((slope / std_error).abs()))
    };
    Ok(SlopeFit {
        slope,
        intercept,
        std_error,
        p_value,
    })
}
