use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Full,
    #[serde(alias = "diag")]
    Diagonal,
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceMode::Full),
            "diag" | "diagonal" => Ok(CovarianceMode::Diagonal),
            other => Err(Error::invalid(format!("unknown covariance mode '{other}'"))),
        }
    }
}

/// Covariance payload of a cluster. `Full` is row-major `dim * dim`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(Vec<f32>),
    Diagonal(Vec<f32>),
}

impl Covariance {
    pub fn zeros(dim: usize, mode: CovarianceMode) -> Self {
        match mode {
            CovarianceMode::Full => Covariance::Full(vec![0.0; dim * dim]),
            CovarianceMode::Diagonal => Covariance::Diagonal(vec![0.0; dim]),
        }
    }

    pub fn mode(&self) -> CovarianceMode {
        match self {
            Covariance::Full(_) => CovarianceMode::Full,
            Covariance::Diagonal(_) => CovarianceMode::Diagonal,
        }
    }

    /// Number of stored floats.
    pub fn payload_len(&self) -> usize {
        match self {
            Covariance::Full(m) => m.len(),
            Covariance::Diagonal(d) => d.len(),
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        match self {
            Covariance::Full(m) => m,
            Covariance::Diagonal(d) => d,
        }
    }

    /// Entry `(i, j)`; off-diagonal entries of a diagonal covariance are zero.
    pub fn get(&self, dim: usize, i: usize, j: usize) -> f32 {
        match self {
            Covariance::Full(m) => m[i * dim + j],
            Covariance::Diagonal(d) => {
                if i == j {
                    d[i]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn diagonal(&self, dim: usize) -> Vec<f32> {
        match self {
            Covariance::Full(m) => (0..dim).map(|i| m[i * dim + i]).collect(),
            Covariance::Diagonal(d) => d.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_slice().iter().all(|&v| v == 0.0)
    }
}

/// One stored cluster: centroid, number of absorbed vectors, and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub centroid: Vec<f32>,
    pub count: u32,
    pub covariance: Covariance,
}

impl Cluster {
    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    pub fn mode(&self) -> CovarianceMode {
        self.covariance.mode()
    }

    /// A single-vector cluster with zero covariance.
    pub fn singleton(vector: &[f32], mode: CovarianceMode) -> Self {
        Cluster {
            centroid: vector.to_vec(),
            count: 1,
            covariance: Covariance::zeros(vector.len(), mode),
        }
    }

    /// Checks count, shape, symmetry and sign invariants.
    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if self.count == 0 {
            return Err(Error::invalid("cluster count must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::invalid("cluster centroid is empty"));
        }
        match &self.covariance {
            Covariance::Full(m) => {
                if m.len() != dim * dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim * dim,
                        actual: m.len(),
                    });
                }
                for i in 0..dim {
                    if m[i * dim + i] < 0.0 {
                        return Err(Error::invalid("negative variance on covariance diagonal"));
                    }
                    for j in 0..i {
                        let (a, b) = (m[i * dim + j], m[j * dim + i]);
                        let scale = a.abs().max(b.abs()).max(f32::MIN_POSITIVE);
                        if (a - b).abs() > 1e-6 * scale {
                            return Err(Error::invalid("full covariance is not symmetric"));
                        }
                    }
                }
            }
            Covariance::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: d.len(),
                    });
                }
                if d.iter().any(|&v| v < 0.0) {
                    return Err(Error::invalid("negative variance in diagonal covariance"));
                }
            }
        }
        Ok(())
    }
}

/// Sample covariance (denominator `n - 1`) of `members` around `center`.
///
/// Returns zeros for a single member. `center` is the running centroid produced by the
/// clustering pass, which equals the member mean up to rounding.
pub(crate) fn member_covariance<V: AsRef<[f32]>>(
    members: &[&V],
    center: &[f64],
    mode: CovarianceMode,
) -> Covariance {
    let dim = center.len();
    let n = members.len();
    if n < 2 {
        return Covariance::zeros(dim, mode);
    }
    let denom = (n - 1) as f64;
    let mut centered = vec![0.0f64; dim];
    match mode {
        CovarianceMode::Diagonal => {
            let mut acc = vec![0.0f64; dim];
            for m in members {
                for ((a, &x), &c) in acc.iter_mut().zip(m.as_ref()).zip(center) {
                    let d = x as f64 - c;
                    *a += d * d;
                }
            }
            Covariance::Diagonal(acc.into_iter().map(|v| (v / denom) as f32).collect())
        }
        CovarianceMode::Full => {
            let mut acc = vec![0.0f64; dim * dim];
            for m in members {
                for ((d, &x), &c) in centered.iter_mut().zip(m.as_ref()).zip(center) {
                    *d = x as f64 - c;
                }
                for i in 0..dim {
                    let di = centered[i];
                    if di == 0.0 {
                        continue;
                    }
                    let row = &mut acc[i * dim..i * dim + i + 1];
                    for (a, &dj) in row.iter_mut().zip(&centered[..=i]) {
                        *a += di * dj;
                    }
                }
            }
            let mut out = vec![0.0f32; dim * dim];
            for i in 0..dim {
                for j in 0..=i {
                    let v = (acc[i * dim + j] / denom) as f32;
                    out[i * dim + j] = v;
                    out[j * dim + i] = v;
                }
            }
            Covariance::Full(out)
        }
    }
}
