//! Two-dimensional demo: cluster a small labeled cloud, regenerate it from the clusters,
//! and measure how close the regenerated cloud's moments are to the original's.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Shots;
use crate::aggvar::cluster_class;
use crate::cluster::CovarianceMode;
use crate::dataset::{split_by_class, write_csv, FeatureDataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::memory::{Budget, MemoryStore};
use crate::rehearsal::{generate, RehearsalPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDiscrepancy {
    pub class_id: u32,
    pub clusters: usize,
    pub original_count: usize,
    pub pseudo_count: usize,
    /// `|mean_pseudo - mean_orig| / |mean_orig|`.
    pub mean_rel_error: f64,
    /// Frobenius norm of the covariance difference over that of the original covariance.
    pub cov_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDemo {
    pub original: FeatureDataset,
    pub pseudo: FeatureDataset,
    pub metrics: Vec<ClassDiscrepancy>,
}

fn moments(vs: &[&[f32]]) -> ([f64; 2], [f64; 4]) {
    let n = vs.len() as f64;
    let mut m = [0.0; 2];
    for v in vs {
        m[0] += v[0] as f64 / n;
        m[1] += v[1] as f64 / n;
    }
    let mut c = [0.0; 4];
    if vs.len() > 1 {
        for v in vs {
            let d = [v[0] as f64 - m[0], v[1] as f64 - m[1]];
            for i in 0..2 {
                for j in 0..2 {
                    c[2 * i + j] += d[i] * d[j] / (n - 1.0);
                }
            }
        }
    }
    (m, c)
}

fn rel(diff: f64, base: f64) -> f64 {
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

/// Clusters each class of `data` with threshold `threshold` and samples a pseudo cloud.
///
/// `samples_per_class` draws that many vectors per class, split over clusters by count;
/// `None` draws exactly one vector per absorbed original vector.
pub fn run_pseudo_demo(
    data: &FeatureDataset,
    threshold: f64,
    shots: Shots,
    samples_per_class: Option<usize>,
    seed: u64,
) -> Result<PseudoDemo> {
    if data.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: data.dim(),
        });
    }
    let mut store = MemoryStore::new(CovarianceMode::Full, Budget::Unlimited);
    let mut original = Vec::new();
    for (class, records) in split_by_class(data) {
        let records = &records[..shots.take(records.len())];
        let out = cluster_class(records, threshold, CovarianceMode::Full)?;
        store.absorb(class, out.clusters, records.len() as u64)?;
        original.extend_from_slice(records);
    }
    let plan = match samples_per_class {
        Some(n) => RehearsalPlan::fsil(n, seed),
        None => RehearsalPlan::standard(seed),
    };
    let classes = store.class_ids().collect();
    let pseudo = generate(&store, &plan, &classes)?;

    let mut metrics = Vec::new();
    for memory in store.classes() {
        let orig: Vec<&[f32]> = original
            .iter()
            .filter(|r| r.label == memory.class_id)
            .map(|r| r.vector.as_slice())
            .collect();
        let gen: Vec<&[f32]> = pseudo.per_class[&memory.class_id]
            .iter()
            .map(Vec::as_slice)
            .collect();
        let (mo, co) = moments(&orig);
        let (mp, cp) = moments(&gen);
        let mean_diff = (mo[0] - mp[0]).hypot(mo[1] - mp[1]);
        let cov_diff = co
            .iter()
            .zip(&cp)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let cov_norm = co.iter().map(|a| a * a).sum::<f64>().sqrt();
        metrics.push(ClassDiscrepancy {
            class_id: memory.class_id,
            clusters: memory.clusters.len(),
            original_count: orig.len(),
            pseudo_count: gen.len(),
            mean_rel_error: rel(mean_diff, mo[0].hypot(mo[1])),
            cov_rel_error: rel(cov_diff, cov_norm),
        });
    }

    let pseudo: Vec<FeatureRecord> = pseudo.records().collect();
    Ok(PseudoDemo {
        original: FeatureDataset::new(2, original)?,
        pseudo: FeatureDataset::new(2, pseudo)?,
        metrics,
    })
}

impl PseudoDemo {
    /// Writes `original.csv`, `pseudo.csv`, and `metrics.json` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_csv(
            &self.original,
            &mut BufWriter::new(File::create(dir.join("original.csv"))?),
        )?;
        write_csv(
            &self.pseudo,
            &mut BufWriter::new(File::create(dir.join("pseudo.csv"))?),
        )?;
        let json = serde_json::to_string_pretty(&self.metrics).map_err(std::io::Error::from)?;
        std::fs::write(dir.join("metrics.json"), json + "\n")?;
        Ok(())
    }
}
