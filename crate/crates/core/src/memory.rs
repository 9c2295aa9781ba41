//! Per-class cluster memory with a global cluster budget.
//!
//! When absorbing a new class would push the total past the budget `K`, the classes
//! already stored shrink proportionally: with `K_t` clusters stored and `K_r` to remove,
//! a class holding `n` clusters keeps `floor(n * (1 - K_r / K_t))` of them (at least one).
//! Clusters are either merged with k-means over the class's centroids
//! ([`ReductionPolicy::Merge`]) or the least-populated ones are dropped
//! ([`ReductionPolicy::Remove`]).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, Covariance, CovarianceMode};
use crate::dataset::{read_f32s, read_u32, read_u64, write_f32s};
use crate::error::{Error, Result};
use crate::kmeans::lloyd;
use crate::seed;

pub const CBMS_MAGIC: &[u8; 4] = b"CBMS";
pub const CBMS_VERSION: u32 = 1;

/// How the covariance of merged clusters is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeCovariance {
    /// Count-weighted average of member covariances.
    #[default]
    Weighted,
    /// Sample covariance of the union of the members' vectors: adds the spread of member
    /// centroids around the merged centroid.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionPolicy {
    Merge(MergeCovariance),
    Remove,
}

impl Default for ReductionPolicy {
    fn default() -> Self {
        ReductionPolicy::Merge(MergeCovariance::Weighted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Unlimited,
    Clusters(usize),
}

impl Budget {
    pub fn limit(self) -> Option<usize> {
        match self {
            Budget::Unlimited => None,
            Budget::Clusters(k) => Some(k),
        }
    }
}

impl std::str::FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlimited" | "none" | "inf" => Ok(Budget::Unlimited),
            n => match n.parse::<usize>() {
                Ok(k) if k > 0 => Ok(Budget::Clusters(k)),
                _ => Err(Error::invalid(format!(
                    "budget must be a positive integer or 'unlimited', got '{s}'"
                ))),
            },
        }
    }
}

impl std::fmt::Display for Budget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Budget::Unlimited => f.write_str("unlimited"),
            Budget::Clusters(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMemory {
    pub class_id: u32,
    pub clusters: Vec<Cluster>,
    /// Number of training vectors this class was learned from.
    pub original_count: u64,
}

impl ClassMemory {
    pub fn stored_count(&self) -> u64 {
        self.clusters.iter().map(|c| c.count as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    classes: BTreeMap<u32, ClassMemory>,
    dim: Option<usize>,
    mode: CovarianceMode,
    budget: Budget,
    policy: ReductionPolicy,
    seed: u64,
}

impl MemoryStore {
    pub fn new(mode: CovarianceMode, budget: Budget) -> Self {
        Self {
            classes: BTreeMap::new(),
            dim: None,
            mode,
            budget,
            policy: ReductionPolicy::default(),
            seed: 0,
        }
    }

    pub fn with_policy(mut self, policy: ReductionPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Seed for the k-means runs performed during reduction.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn policy(&self) -> ReductionPolicy {
        self.policy
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, class_id: u32) -> Option<&ClassMemory> {
        self.classes.get(&class_id)
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassMemory> {
        self.classes.values()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.keys().copied()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total_clusters(&self) -> usize {
        self.classes.values().map(|c| c.clusters.len()).sum()
    }

    /// Registers a new class, shrinking stored classes first if the budget requires it.
    pub fn absorb(
        &mut self,
        class_id: u32,
        clusters: Vec<Cluster>,
        original_count: u64,
    ) -> Result<()> {
        if self.classes.contains_key(&class_id) {
            return Err(Error::DuplicateClass(class_id));
        }
        if clusters.is_empty() {
            return Err(Error::Empty("class has no clusters"));
        }
        let dim = self.dim.unwrap_or(clusters[0].dim());
        for c in &clusters {
            if c.mode() != self.mode {
                return Err(Error::ModeMismatch {
                    store: self.mode,
                    given: c.mode(),
                });
            }
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.dim(),
                });
            }
            c.validate()?;
        }
        let stored: u64 = clusters.iter().map(|c| c.count as u64).sum();
        if original_count < stored {
            return Err(Error::invalid(format!(
                "class {class_id}: clusters hold {stored} vectors but original count is {original_count}"
            )));
        }
        if let Some(k) = self.budget.limit() {
            if self.classes.len() + 1 > k {
                return Err(Error::BudgetTooSmall {
                    budget: k,
                    classes: self.classes.len() + 1,
                });
            }
        }

        let k_new = clusters.len();
        let k_t = self.total_clusters();
        let entry = ClassMemory {
            class_id,
            clusters,
            original_count,
        };

        match self.budget.limit() {
            Some(k) if k_t + k_new > k => {
                let k_r = k_t + k_new - k;
                if k_r < k_t && k_t - k_r >= self.classes.len() {
                    self.shrink(k_r, self.policy)?;
                    self.insert(entry, dim);
                } else {
                    // The new class alone does not fit beside one cluster per old class;
                    // it has to take part in the reduction too.
                    self.insert(entry, dim);
                    let total = k_t + k_new;
                    self.shrink(total - k, self.policy)?;
                }
            }
            _ => self.insert(entry, dim),
        }
        Ok(())
    }

    fn insert(&mut self, entry: ClassMemory, dim: usize) {
        self.dim = Some(dim);
        self.classes.insert(entry.class_id, entry);
    }

    /// Removes `k_r` clusters in total by merging within each class.
    pub fn reduce(&mut self, k_r: usize) -> Result<()> {
        let merge = match self.policy {
            ReductionPolicy::Merge(m) => m,
            ReductionPolicy::Remove => MergeCovariance::default(),
        };
        self.shrink(k_r, ReductionPolicy::Merge(merge))
    }

    /// Removes `k_r` clusters in total by dropping the least-populated ones of each class.
    pub fn remove_only(&mut self, k_r: usize) -> Result<()> {
        self.shrink(k_r, ReductionPolicy::Remove)
    }

    /// Applies the configured policy until the store fits its budget. No-op when it already does.
    pub fn enforce_budget(&mut self) -> Result<()> {
        if let Some(k) = self.budget.limit() {
            let total = self.total_clusters();
            if total > k {
                self.shrink(total - k, self.policy)?;
            }
        }
        Ok(())
    }

    fn shrink(&mut self, k_r: usize, policy: ReductionPolicy) -> Result<()> {
        if k_r == 0 {
            return Ok(());
        }
        let sizes: BTreeMap<u32, usize> = self
            .classes
            .iter()
            .map(|(&id, c)| (id, c.clusters.len()))
            .collect();
        let targets = reduction_targets(&sizes, k_r)?;
        let base_seed = self.seed;
        for (id, class) in self.classes.iter_mut() {
            let target = targets[id];
            if target >= class.clusters.len() {
                continue;
            }
            let clusters = std::mem::take(&mut class.clusters);
            class.clusters = match policy {
                ReductionPolicy::Merge(cov) => {
                    let s = seed::derive(
                        base_seed,
                        &[*id as u64, clusters.len() as u64, target as u64],
                    );
                    merge_clusters(clusters, target, cov, s)
                }
                ReductionPolicy::Remove => drop_smallest(clusters, target),
            };
        }
        Ok(())
    }

    /// Bytes used by stored clusters: `f32` centroid, `u32` count, `f32` covariance payload.
    pub fn memory_bytes(&self) -> u64 {
        self.classes
            .values()
            .flat_map(|c| &c.clusters)
            .map(|c| 4 * c.dim() as u64 + 4 + 4 * c.covariance.payload_len() as u64)
            .sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path.as_ref())?))
    }

    /// CBMS layout (little-endian): magic, `u32` version, `u32` dim (0 when empty),
    /// `u32` mode (0 full, 1 diagonal), `u32` policy (0 merge-weighted, 1 merge-pooled,
    /// 2 remove), `u64` budget (`u64::MAX` = unlimited), `u64` reduction seed, `u64` class
    /// count; per class `u32` id, `u64` original count, `u64` cluster count; per cluster
    /// `u32` count, `dim` f32 centroid, then `dim` (diagonal) or `dim * dim` (full) f32.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CBMS_MAGIC)?;
        w.write_all(&CBMS_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim.unwrap_or(0) as u32).to_le_bytes())?;
        let mode: u32 = match self.mode {
            CovarianceMode::Full => 0,
            CovarianceMode::Diagonal => 1,
        };
        w.write_all(&mode.to_le_bytes())?;
        let policy: u32 = match self.policy {
            ReductionPolicy::Merge(MergeCovariance::Weighted) => 0,
            ReductionPolicy::Merge(MergeCovariance::Pooled) => 1,
            ReductionPolicy::Remove => 2,
        };
        w.write_all(&policy.to_le_bytes())?;
        let budget = match self.budget {
            Budget::Unlimited => u64::MAX,
            Budget::Clusters(k) => k as u64,
        };
        w.write_all(&budget.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.classes.len() as u64).to_le_bytes())?;
        for class in self.classes.values() {
            w.write_all(&class.class_id.to_le_bytes())?;
            w.write_all(&class.original_count.to_le_bytes())?;
            w.write_all(&(class.clusters.len() as u64).to_le_bytes())?;
            for c in &class.clusters {
                w.write_all(&c.count.to_le_bytes())?;
                write_f32s(w, &c.centroid)?;
                write_f32s(w, c.covariance.as_slice())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let truncated = |_| Error::Format("CBMS file truncated".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CBMS_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected CBMS")));
        }
        let version = read_u32(&mut r).map_err(truncated)?;
        if version != CBMS_VERSION {
            return Err(Error::Format(format!("unsupported CBMS version {version}")));
        }
        let dim = read_u32(&mut r).map_err(truncated)? as usize;
        let mode = match read_u32(&mut r).map_err(truncated)? {
            0 => CovarianceMode::Full,
            1 => CovarianceMode::Diagonal,
            m => return Err(Error::Format(format!("unknown covariance mode {m}"))),
        };
        let policy = match read_u32(&mut r).map_err(truncated)? {
            0 => ReductionPolicy::Merge(MergeCovariance::Weighted),
            1 => ReductionPolicy::Merge(MergeCovariance::Pooled),
            2 => ReductionPolicy::Remove,
            p => return Err(Error::Format(format!("unknown reduction policy {p}"))),
        };
        let budget = match read_u64(&mut r).map_err(truncated)? {
            u64::MAX => Budget::Unlimited,
            0 => return Err(Error::Format("zero budget".into())),
            k => Budget::Clusters(k as usize),
        };
        let seed = read_u64(&mut r).map_err(truncated)?;
        let n_classes = read_u64(&mut r).map_err(truncated)?;
        if n_classes > 0 && dim == 0 {
            return Err(Error::Format("non-empty store with dimension 0".into()));
        }
        let payload = match mode {
            CovarianceMode::Full => dim * dim,
            CovarianceMode::Diagonal => dim,
        };

        let mut classes = BTreeMap::new();
        for _ in 0..n_classes {
            let class_id = read_u32(&mut r).map_err(truncated)?;
            let original_count = read_u64(&mut r).map_err(truncated)?;
            let n_clusters = read_u64(&mut r).map_err(truncated)?;
            let mut clusters = Vec::with_capacity(n_clusters.min(1 << 16) as usize);
            for _ in 0..n_clusters {
                let count = read_u32(&mut r).map_err(truncated)?;
                let centroid = read_f32s(&mut r, dim).map_err(truncated)?;
                let cov = read_f32s(&mut r, payload).map_err(truncated)?;
                let cluster = Cluster {
                    centroid,
                    count,
                    covariance: match mode {
                        CovarianceMode::Full => Covariance::Full(cov),
                        CovarianceMode::Diagonal => Covariance::Diagonal(cov),
                    },
                };
                cluster
                    .validate()
                    .map_err(|e| Error::Format(format!("class {class_id}: {e}")))?;
                clusters.push(cluster);
            }
            if clusters.is_empty() {
                return Err(Error::Format(format!("class {class_id} has no clusters")));
            }
            if classes
                .insert(
                    class_id,
                    ClassMemory {
                        class_id,
                        clusters,
                        original_count,
                    },
                )
                .is_some()
            {
                return Err(Error::Format(format!("class {class_id} appears twice")));
            }
        }
        Ok(Self {
            classes,
            dim: (dim > 0).then_some(dim),
            mode,
            budget,
            policy,
            seed,
        })
    }
}

/// Per-class cluster targets after removing `k_r` of the `K_t = sum(sizes)` stored clusters.
///
/// Each class keeps `floor(n * (1 - k_r / K_t))`, clamped to at least 1. If clamping leaves
/// the total above `K_t - k_r`, the largest classes give up one more cluster each (ties to
/// the lowest class id) until it fits.
pub fn reduction_targets(sizes: &BTreeMap<u32, usize>, k_r: usize) -> Result<BTreeMap<u32, usize>> {
    let k_t: usize = sizes.values().sum();
    if k_r >= k_t {
        return Err(Error::ReductionTooLarge {
            remove: k_r,
            total: k_t,
        });
    }
    let allowed = k_t - k_r;
    if sizes.len() > allowed {
        return Err(Error::BudgetTooSmall {
            budget: allowed,
            classes: sizes.len(),
        });
    }
    // floor(n * (K_t - K_r) / K_t) in exact integer arithmetic.
    let mut targets: BTreeMap<u32, usize> = sizes
        .iter()
        .map(|(&id, &n)| (id, ((n * allowed) / k_t).max(1)))
        .collect();
    let mut total: usize = targets.values().sum();
    while total > allowed {
        let (&id, _) = targets
            .iter()
            .filter(|(_, &t)| t > 1)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("more than one cluster per class while over budget");
        *targets.get_mut(&id).unwrap() -= 1;
        total -= 1;
    }
    Ok(targets)
}

/// Merges `clusters` into `target` clusters with count-weighted k-means over the centroids.
pub(crate) fn merge_clusters(
    clusters: Vec<Cluster>,
    target: usize,
    cov: MergeCovariance,
    seed: u64,
) -> Vec<Cluster> {
    if target >= clusters.len() {
        return clusters;
    }
    let points: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| c.centroid.iter().map(|&x| x as f64).collect())
        .collect();
    let weights: Vec<f64> = clusters.iter().map(|c| c.count as f64).collect();
    let assignment = lloyd(&points, &weights, target, seed);
    let mut groups: Vec<Vec<&Cluster>> = vec![Vec::new(); target];
    for (c, &a) in clusters.iter().zip(&assignment) {
        groups[a].push(c);
    }
    groups.iter().map(|g| merge_group(g, cov)).collect()
}

/// Combines clusters into one: count-weighted centroid, summed count, merged covariance.
pub fn merge_group(group: &[&Cluster], cov: MergeCovariance) -> Cluster {
    let dim = group[0].dim();
    let total: f64 = group.iter().map(|c| c.count as f64).sum();
    let mut centroid = vec![0.0f64; dim];
    for c in group {
        let w = c.count as f64 / total;
        for (m, &x) in centroid.iter_mut().zip(&c.centroid) {
            *m += w * x as f64;
        }
    }

    let mode = group[0].mode();
    let n = dim;
    let idx = |i: usize, j: usize| match mode {
        CovarianceMode::Full => i * n + j,
        CovarianceMode::Diagonal => i,
    };
    let len = match mode {
        CovarianceMode::Full => n * n,
        CovarianceMode::Diagonal => n,
    };
    let mut acc = vec![0.0f64; len];
    match cov {
        MergeCovariance::Weighted => {
            for c in group {
                let w = c.count as f64 / total;
                for (a, &v) in acc.iter_mut().zip(c.covariance.as_slice()) {
                    *a += w * v as f64;
                }
            }
        }
        MergeCovariance::Pooled => {
            // Union sample covariance:
            // (sum (n_i - 1) S_i + sum n_i (c_i - c)(c_i - c)^T) / (N - 1)
            if total > 1.0 {
                for c in group {
                    let ni = c.count as f64;
                    for (a, &v) in acc.iter_mut().zip(c.covariance.as_slice()) {
                        *a += (ni - 1.0) * v as f64;
                    }
                    let delta: Vec<f64> = c
                        .centroid
                        .iter()
                        .zip(&centroid)
                        .map(|(&x, &m)| x as f64 - m)
                        .collect();
                    for i in 0..n {
                        match mode {
                            CovarianceMode::Full => {
                                for j in 0..n {
                                    acc[idx(i, j)] += ni * delta[i] * delta[j];
                                }
                            }
                            CovarianceMode::Diagonal => acc[idx(i, i)] += ni * delta[i] * delta[i],
                        }
                    }
                }
                for a in acc.iter_mut() {
                    *a /= total - 1.0;
                }
            }
        }
    }
    let acc: Vec<f32> = acc.into_iter().map(|v| v as f32).collect();
    Cluster {
        centroid: centroid.into_iter().map(|v| v as f32).collect(),
        count: total as u32,
        covariance: match mode {
            CovarianceMode::Full => Covariance::Full(acc),
            CovarianceMode::Diagonal => Covariance::Diagonal(acc),
        },
    }
}

/// Keeps the `target` most populated clusters, preserving their original order.
/// Among equal counts, later clusters are dropped first.
fn drop_smallest(clusters: Vec<Cluster>, target: usize) -> Vec<Cluster> {
    if target >= clusters.len() {
        return clusters;
    }
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| clusters[b].count.cmp(&clusters[a].count).then(a.cmp(&b)));
    let mut keep = vec![false; clusters.len()];
    for &i in &order[..target] {
        keep[i] = true;
    }
    clusters
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}
