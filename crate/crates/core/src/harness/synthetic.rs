//! Mixture-of-Gaussians benchmark data.
//!
//! Each class owns `min_modes` to `max_modes` axis-aligned Gaussian modes placed around a
//! class center. Defaults are scaled so the default distance threshold of 20 yields on the
//! order of ten clusters per class of 100 vectors, and so per-axis noise varies across
//! dimensions the way extracted features do.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureDataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    pub min_modes: usize,
    pub max_modes: usize,
    /// Per-coordinate standard deviation of class centers.
    pub class_separation: f64,
    /// Per-coordinate standard deviation of mode centers around their class center.
    pub mode_offset: f64,
    /// Base per-coordinate standard deviation inside a mode, scaled by U(0.5, 1.5) per axis.
    pub spread: f64,
    /// Axis `j` has its spread scaled by `exp(anisotropy * u_j)`, `u_j ~ U(-1, 1)`, for
    /// every class alike.
    pub anisotropy: f64,
    /// Constant added to every coordinate. Extracted CNN features share a large positive
    /// mean, which is what makes a fine-tuned classifier forget.
    pub shift: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            dim: 32,
            min_modes: 1,
            max_modes: 3,
            class_separation: 0.6,
            mode_offset: 1.2,
            spread: 1.8,
            anisotropy: 1.0,
            shift: 3.0,
            train_per_class: 100,
            test_per_class: 50,
            seed: 0,
        }
    }
}

struct Mode {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::invalid("classes and dim must be at least 1"));
        }
        if self.min_modes == 0 || self.min_modes > self.max_modes {
            return Err(Error::invalid("need 1 <= min_modes <= max_modes"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::invalid("train and test sizes must be at least 1"));
        }
        for v in [
            self.class_separation,
            self.mode_offset,
            self.spread,
            self.anisotropy,
            self.shift.abs(),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "scales must be finite and non-negative, shift finite",
                ));
            }
        }
        Ok(())
    }
}

/// Returns `(train, test)`, each shuffled so classes interleave in file order.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(FeatureDataset, FeatureDataset)> {
    config.validate()?;
    let mut rng = seed::rng_for(config.seed, &[0]);
    let normal = |rng: &mut seed::Rng| -> f64 { StandardNormal.sample(rng) };

    let axis_scale: Vec<f64> = (0..config.dim)
        .map(|_| (config.anisotropy * rng.random_range(-1.0..1.0)).exp())
        .collect();
    let mut train = Vec::with_capacity(config.classes * config.train_per_class);
    let mut test = Vec::with_capacity(config.classes * config.test_per_class);
    for class in 0..config.classes {
        let center: Vec<f64> = (0..config.dim)
            .map(|_| config.shift + config.class_separation * normal(&mut rng))
            .collect();
        let n_modes = rng.random_range(config.min_modes..=config.max_modes);
        let modes: Vec<Mode> = (0..n_modes)
            .map(|_| Mode {
                mean: center
                    .iter()
                    .map(|&c| c + config.mode_offset * normal(&mut rng))
                    .collect(),
                std: axis_scale
                    .iter()
                    .map(|&a| a * config.spread * rng.random_range(0.5..1.5))
                    .collect(),
            })
            .collect();
        let draw = |rng: &mut seed::Rng| {
            let m = &modes[rng.random_range(0..modes.len())];
            let v: Vec<f32> = m
                .mean
                .iter()
                .zip(&m.std)
                .map(|(&mu, &s)| (mu + s * normal(rng)) as f32)
                .collect();
            FeatureRecord::new(class as u32, v)
        };
        for _ in 0..config.train_per_class {
            train.push(draw(&mut rng));
        }
        for _ in 0..config.test_per_class {
            test.push(draw(&mut rng));
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((
        FeatureDataset::new(config.dim, train)?,
        FeatureDataset::new(config.dim, test)?,
    ))
}
