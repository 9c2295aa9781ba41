//! Agg-Var clustering: a single ordered pass over one class's feature vectors.
//!
//! The first vector seeds cluster 0. Every later vector is compared with all current
//! centroids of the class; if the nearest one is strictly closer than the threshold the
//! vector is folded into it with the running-mean update
//! `c <- (w * c + x) / (w + 1)`, otherwise it opens a new cluster. Centroids move during
//! the pass, so the result depends on input order.
//!
//! Once the pass is over, each cluster's covariance is computed from exactly the vectors
//! assigned to it.

use crate::cluster::{member_covariance, Cluster, CovarianceMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AggVarOutput {
    pub clusters: Vec<Cluster>,
    /// Cluster index for every input vector, in input order.
    pub assignment: Vec<usize>,
}

pub fn cluster_class<V: AsRef<[f32]>>(
    vectors: &[V],
    threshold: f64,
    mode: CovarianceMode,
) -> Result<AggVarOutput> {
    let first = vectors
        .first()
        .ok_or(Error::Empty("no vectors to cluster"))?;
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::invalid(format!(
            "distance threshold must be non-negative, got {threshold}"
        )));
    }
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::invalid("vectors must have at least one component"));
    }
    let threshold_sq = threshold * threshold;

    let mut centroids: Vec<Vec<f64>> = vec![to_f64(first.as_ref())];
    let mut counts: Vec<u32> = vec![1];
    let mut assignment = Vec::with_capacity(vectors.len());
    assignment.push(0);

    for v in &vectors[1..] {
        let x = v.as_ref();
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: x.len(),
            });
        }
        let (nearest, dist_sq) = nearest_centroid(&centroids, x);
        if dist_sq < threshold_sq {
            let w = counts[nearest] as f64;
            for (c, &xi) in centroids[nearest].iter_mut().zip(x) {
                *c = (w * *c + xi as f64) / (w + 1.0);
            }
            counts[nearest] += 1;
            assignment.push(nearest);
        } else {
            centroids.push(to_f64(x));
            counts.push(1);
            assignment.push(centroids.len() - 1);
        }
    }

    let mut members: Vec<Vec<&V>> = vec![Vec::new(); centroids.len()];
    for (v, &a) in vectors.iter().zip(&assignment) {
        members[a].push(v);
    }

    let clusters = centroids
        .iter()
        .zip(&counts)
        .zip(&members)
        .map(|((centroid, &count), group)| Cluster {
            centroid: centroid.iter().map(|&c| c as f32).collect(),
            count,
            covariance: member_covariance(group, centroid, mode),
        })
        .collect();

    Ok(AggVarOutput {
        clusters,
        assignment,
    })
}

/// Index and squared distance of the closest centroid; the lowest index wins ties.
fn nearest_centroid(centroids: &[Vec<f64>], x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = c
            .iter()
            .zip(x)
            .map(|(&a, &b)| {
                let t = a - b as f64;
                t * t
            })
            .sum::<f64>();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}
