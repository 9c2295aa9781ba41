//! Lloyd's k-means, used for the k-means ablation backends and for merging clusters when
//! the memory budget is exceeded.
//!
//! Initial centers are `k` distinct input indices drawn from a seeded generator. An
//! empty cell is repaired by moving into it the point farthest from its own center (taken
//! only from cells with more than one member). Iteration stops when assignments no longer
//! change or after [`MAX_ITERATIONS`] rounds.

use rand::seq::index;

use crate::cluster::{member_covariance, Cluster, CovarianceMode};
use crate::error::{Error, Result};
use crate::seed;

pub const MAX_ITERATIONS: usize = 100;

/// Partitions `points` into exactly `k` non-empty cells.
///
/// `weights` scale each point's contribution to its cell mean. Returns the cell index
/// of every point.
pub(crate) fn lloyd(points: &[Vec<f64>], weights: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    debug_assert!(k >= 1 && k <= n && weights.len() == n);
    let dim = points[0].len();

    let mut rng = seed::rng(seed);
    let mut centers: Vec<Vec<f64>> = index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut assignment: Vec<usize> = vec![usize::MAX; n];

    for _ in 0..MAX_ITERATIONS {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
        repair_empty(points, &mut centers, &mut next);
        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut mass = vec![0.0f64; k];
        for ((p, &w), &a) in points.iter().zip(weights).zip(&assignment) {
            mass[a] += w;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s += w * x;
            }
        }
        for ((center, sum), m) in centers.iter_mut().zip(sums).zip(mass) {
            if m > 0.0 {
                *center = sum.into_iter().map(|s| s / m).collect();
            }
        }
    }
    assignment
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn repair_empty(points: &[Vec<f64>], centers: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centers.len();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut donor: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centers[a]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        let Some((i, _)) = donor else { break };
        sizes[assignment[i]] -= 1;
        sizes[empty] = 1;
        assignment[i] = empty;
        centers[empty] = points[i].clone();
    }
}

/// Clusters one class's vectors into exactly `k` cells.
///
/// Each output cluster carries its cell mean, size, and the sample covariance of its
/// members, using the same conventions as Agg-Var.
pub fn kmeans_class<V: AsRef<[f32]>>(
    vectors: &[V],
    k: usize,
    seed: u64,
    mode: CovarianceMode,
) -> Result<Vec<Cluster>> {
    if vectors.is_empty() {
        return Err(Error::Empty("no vectors to cluster"));
    }
    if k == 0 || k > vectors.len() {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            vectors.len()
        )));
    }
    let dim = vectors[0].as_ref().len();
    let points = vectors
        .iter()
        .map(|v| {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            Ok(v.iter().map(|&x| x as f64).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let assignment = lloyd(&points, &vec![1.0; points.len()], k, seed);

    let mut members: Vec<Vec<&V>> = vec![Vec::new(); k];
    let mut sums = vec![vec![0.0f64; dim]; k];
    for ((v, p), &a) in vectors.iter().zip(&points).zip(&assignment) {
        members[a].push(v);
        for (s, &x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    Ok(members
        .iter()
        .zip(sums)
        .map(|(group, sum)| {
            let n = group.len() as f64;
            let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
            Cluster {
                centroid: mean.iter().map(|&m| m as f32).collect(),
                count: group.len() as u32,
                covariance: member_covariance(group, &mean, mode),
            }
        })
        .collect())
}
