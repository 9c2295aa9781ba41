//! Centroid-based predictors: weighted voting over the closest stored centroids, and the
//! nearest-class-mean baseline.
//!
//! Voting measures the distance to every stored centroid, fully sorts them, and lets the
//! `top_n` closest add `1 / (distance + epsilon)` to their class's score. Cost per query
//! grows as `O(N_C log N_C)` in the number of stored centroids, whereas the linear
//! classifier depends only on `dim x classes`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Predictor;
use crate::memory::MemoryStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotingConfig {
    pub top_n: usize,
    pub epsilon: f64,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            top_n: 1,
            epsilon: 1e-8,
        }
    }
}

fn check_dim(store: &MemoryStore, x: &[f32]) -> Result<usize> {
    let dim = store.dim().ok_or(Error::Empty("memory store is empty"))?;
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.len(),
        });
    }
    Ok(dim)
}

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn predict_voting(store: &MemoryStore, x: &[f32], config: &VotingConfig) -> Result<u32> {
    check_dim(store, x)?;
    if config.top_n == 0 {
        return Err(Error::invalid("top_n must be at least 1"));
    }

    let mut scored: Vec<(f64, u32)> = Vec::with_capacity(store.total_clusters());
    for class in store.classes() {
        for c in &class.clusters {
            scored.push((distance(&c.centroid, x), class.class_id));
        }
    }
    let by_distance = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if config.top_n < scored.len() {
        scored.select_nth_unstable_by(config.top_n - 1, by_distance);
        scored.truncate(config.top_n);
    }
    scored.sort_by(by_distance);

    // Class ids are sparse; scores live in a small vector indexed by rank in the store.
    let ids: Vec<u32> = store.class_ids().collect();
    let mut scores = vec![0.0f64; ids.len()];
    for &(d, class) in scored.iter().take(config.top_n) {
        let slot = ids.binary_search(&class).expect("class from store");
        scores[slot] += 1.0 / (d + config.epsilon);
    }

    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(ids[best])
}

/// Count-weighted mean of each class's centroids, i.e. the mean of the vectors it absorbed.
pub fn class_means(store: &MemoryStore) -> Vec<(u32, Vec<f64>)> {
    store
        .classes()
        .map(|class| {
            let dim = class.clusters[0].dim();
            let total: f64 = class.clusters.iter().map(|c| c.count as f64).sum();
            let mut mean = vec![0.0f64; dim];
            for c in &class.clusters {
                let w = c.count as f64 / total;
                for (m, &v) in mean.iter_mut().zip(&c.centroid) {
                    *m += w * v as f64;
                }
            }
            (class.class_id, mean)
        })
        .collect()
}

pub fn predict_ncm(store: &MemoryStore, x: &[f32]) -> Result<u32> {
    check_dim(store, x)?;
    Ok(nearest_mean(&class_means(store), x))
}

fn nearest_mean(means: &[(u32, Vec<f64>)], x: &[f32]) -> u32 {
    let mut best = (u32::MAX, f64::INFINITY);
    for (id, m) in means {
        let d: f64 = m
            .iter()
            .zip(x)
            .map(|(&a, &b)| (a - b as f64) * (a - b as f64))
            .sum();
        if d < best.1 || (d == best.1 && *id < best.0) {
            best = (*id, d);
        }
    }
    best.0
}

/// [`predict_voting`] bound to a store snapshot.
#[derive(Debug, Clone, Copy)]
pub struct VotingPredictor<'a> {
    pub store: &'a MemoryStore,
    pub config: VotingConfig,
}

impl Predictor for VotingPredictor<'_> {
    fn predict(&self, vector: &[f32]) -> Result<u32> {
        predict_voting(self.store, vector, &self.config)
    }
}

/// Nearest-class-mean predictor with class means computed once.
#[derive(Debug, Clone)]
pub struct NcmPredictor {
    dim: usize,
    means: Vec<(u32, Vec<f64>)>,
}

impl NcmPredictor {
    pub fn new(store: &MemoryStore) -> Result<Self> {
        let dim = store.dim().ok_or(Error::Empty("memory store is empty"))?;
        Ok(Self {
            dim,
            means: class_means(store),
        })
    }

    pub fn means(&self) -> &[(u32, Vec<f64>)] {
        &self.means
    }
}

impl Predictor for NcmPredictor {
    fn predict(&self, vector: &[f32]) -> Result<u32> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        Ok(nearest_mean(&self.means, vector))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Cluster, CovarianceMode};
    use crate::memory::Budget;

    /// Centroid and count.
    type Point = ([f32; 2], u32);

    fn store(classes: &[(u32, &[Point])]) -> MemoryStore {
        let mut s = MemoryStore::new(CovarianceMode::Diagonal, Budget::Unlimited);
        for (id, cs) in classes {
            let clusters = cs
                .iter()
                .map(|(c, n)| Cluster {
                    count: *n,
                    ..Cluster::singleton(c, CovarianceMode::Diagonal)
                })
                .collect();
            let total = cs.iter().map(|(_, n)| *n as u64).sum();
            s.absorb(*id, clusters, total).unwrap();
        }
        s
    }

    /// Direct score computation over every centroid, without sorting.
    fn brute_force(store: &MemoryStore, x: &[f32], top_n: usize, eps: f64) -> u32 {
        let mut all: Vec<(f64, u32)> = Vec::new();
        for class in store.classes() {
            for c in &class.clusters {
                let d = ((c.centroid[0] - x[0]) as f64).hypot((c.centroid[1] - x[1]) as f64);
                all.push((d, class.class_id));
            }
        }
        // Selection of the top_n by repeated minimum extraction.
        let mut chosen = vec![false; all.len()];
        let mut scores = std::collections::BTreeMap::<u32, f64>::new();
        for id in store.class_ids() {
            scores.insert(id, 0.0);
        }
        for _ in 0..top_n.min(all.len()) {
            let mut best: Option<usize> = None;
            for (i, e) in all.iter().enumerate() {
                if chosen[i] {
                    continue;
                }
                if best.is_none_or(|b| e.0 < all[b].0 || (e.0 == all[b].0 && e.1 < all[b].1)) {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            chosen[b] = true;
            *scores.get_mut(&all[b].1).unwrap() += 1.0 / (all[b].0 + eps);
        }
        let max = scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        *scores.iter().find(|(_, &v)| v == max).unwrap().0
    }

    #[test]
    fn single_class_always_wins() {
        let s = store(&[(4, &[([0.0, 0.0], 1), ([5.0, 5.0], 2)])]);
        assert_eq!(
            predict_voting(&s, &[100.0, -3.0], &VotingConfig::default()).unwrap(),
            4
        );
    }

    #[test]
    fn top_one_is_nearest_centroid() {
        let s = store(&[
            (0, &[([0.0, 0.0], 1), ([10.0, 10.0], 1)]),
            (1, &[([4.0, 4.0], 1)]),
        ]);
        let cfg = VotingConfig::default();
        assert_eq!(predict_voting(&s, &[9.0, 9.0], &cfg).unwrap(), 0);
        assert_eq!(predict_voting(&s, &[5.0, 4.0], &cfg).unwrap(), 1);
    }

    #[test]
    fn matches_brute_force_on_hand_placed_centroids() {
        let s = store(&[
            (0, &[([0.0, 0.0], 1), ([2.0, 0.0], 1)]),
            (1, &[([1.0, 1.0], 1), ([1.0, -1.0], 1)]),
            (2, &[([1.0, 3.0], 1)]),
        ]);
        // [1, 0] is at distance 1 from four centroids of classes 0 and 1.
        let queries = [
            [1.0f32, 0.0],
            [0.5, 0.5],
            [1.0, 2.0],
            [3.0, -2.0],
            [1.0, 1.0],
        ];
        for top_n in 1..=5 {
            let cfg = VotingConfig {
                top_n,
                epsilon: 1e-8,
            };
            for q in &queries {
                assert_eq!(
                    predict_voting(&s, q, &cfg).unwrap(),
                    brute_force(&s, q, top_n, 1e-8),
                    "top_n {top_n} query {q:?}"
                );
            }
        }
        // Four equidistant votes split 2:2, tie broken to the lowest class id.
        let cfg = VotingConfig {
            top_n: 4,
            epsilon: 1e-8,
        };
        assert_eq!(predict_voting(&s, &[1.0, 0.0], &cfg).unwrap(), 0);
    }

    #[test]
    fn ncm_examples() {
        let s = store(&[(0, &[([0.0, 0.0], 1)]), (1, &[([10.0, 0.0], 1)])]);
        assert_eq!(predict_ncm(&s, &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(predict_ncm(&s, &[5.0, 0.0]).unwrap(), 0);
        assert_eq!(predict_ncm(&s, &[6.0, 0.0]).unwrap(), 1);
        assert!(predict_ncm(&s, &[1.0]).is_err());
    }

    #[test]
    fn ncm_uses_count_weighted_means() {
        // Class 0 mean = (3*[0,0] + 1*[8,0]) / 4 = [2, 0].
        let s = store(&[
            (0, &[([0.0, 0.0], 3), ([8.0, 0.0], 1)]),
            (1, &[([5.0, 0.0], 1)]),
        ]);
        let means = class_means(&s);
        assert_eq!(means[0].1, vec![2.0, 0.0]);
        assert_eq!(predict_ncm(&s, &[3.4, 0.0]).unwrap(), 0);
        let ncm = NcmPredictor::new(&s).unwrap();
        assert_eq!(ncm.predict(&[3.6, 0.0]).unwrap(), 1);
    }

    #[test]
    fn empty_store_is_an_error() {
        let s = MemoryStore::new(CovarianceMode::Diagonal, Budget::Unlimited);
        assert!(predict_voting(&s, &[0.0], &VotingConfig::default()).is_err());
        assert!(predict_ncm(&s, &[0.0]).is_err());
    }
}
