//! Single-layer linear softmax classifier trained with minibatch SGD and momentum.
//!
//! Parameters are kept in `f64`; checkpoints (`CBLC`) store them as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_f32s, read_u32, write_f32s, FeatureDataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, Predictor};
use crate::seed;

pub const CBLC_MAGIC: &[u8; 4] = b"CBLC";
pub const CBLC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    dim: usize,
    classes: usize,
    /// Row-major `classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    use_bias: bool,
}

/// Mean loss and its gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    /// Weights drawn uniformly from `[-1/sqrt(dim), 1/sqrt(dim)]`; bias starts at zero.
    pub fn new(dim: usize, classes: usize, use_bias: bool, seed: u64) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::invalid(
                "classifier needs dim >= 1 and at least one class",
            ));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut rng = seed::rng(seed);
        let weights = (0..dim * classes)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Ok(Self {
            dim,
            classes,
            weights,
            bias: vec![0.0; classes],
            use_bias,
        })
    }

    pub fn from_parts(
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        use_bias: bool,
    ) -> Result<Self> {
        let classes = bias.len();
        if dim == 0 || classes == 0 || weights.len() != dim * classes {
            return Err(Error::invalid(
                "weights must be classes x dim with classes = bias.len()",
            ));
        }
        Ok(Self {
            dim,
            classes,
            weights,
            bias,
            use_bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn uses_bias(&self) -> bool {
        self.use_bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        for (y, o) in out.iter_mut().enumerate() {
            let row = &self.weights[y * self.dim..(y + 1) * self.dim];
            let dot: f64 = row.iter().zip(x).map(|(&w, &v)| w * v as f64).sum();
            *o = dot + if self.use_bias { self.bias[y] } else { 0.0 };
        }
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.classes];
        self.logits_into(x, &mut out);
        Ok(out)
    }

    pub fn probabilities(&self, x: &[f32]) -> Result<Vec<f64>> {
        let mut p = self.logits(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Cross-entropy loss averaged over `batch` and its gradient.
    pub fn loss_and_gradient(&self, batch: &[&FeatureRecord]) -> Result<LossGradient> {
        let mut grad = LossGradient {
            loss: 0.0,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.classes],
        };
        if batch.is_empty() {
            return Ok(grad);
        }
        let mut probs = vec![0.0; self.classes];
        for r in batch {
            self.check_dim(&r.vector)?;
            self.accumulate(r, &mut probs, &mut grad)?;
        }
        let inv = 1.0 / batch.len() as f64;
        grad.loss *= inv;
        grad.weights.iter_mut().for_each(|g| *g *= inv);
        grad.bias.iter_mut().for_each(|g| *g *= inv);
        Ok(grad)
    }

    /// Adds one sample's loss and unnormalized gradient to `grad`.
    fn accumulate(
        &self,
        r: &FeatureRecord,
        probs: &mut [f64],
        grad: &mut LossGradient,
    ) -> Result<()> {
        let label = r.label as usize;
        if label >= self.classes {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                classes: self.classes,
            });
        }
        self.logits_into(&r.vector, probs);
        let log_z = log_sum_exp(probs);
        grad.loss += log_z - probs[label];
        for (y, p) in probs.iter_mut().enumerate() {
            *p = (*p - log_z).exp();
            let delta = *p - if y == label { 1.0 } else { 0.0 };
            if delta == 0.0 {
                continue;
            }
            let row = &mut grad.weights[y * self.dim..(y + 1) * self.dim];
            for (g, &v) in row.iter_mut().zip(&r.vector) {
                *g += delta * v as f64;
            }
            if self.use_bias {
                grad.bias[y] += delta;
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over a dataset.
    pub fn loss(&self, data: &FeatureDataset) -> Result<f64> {
        let refs: Vec<&FeatureRecord> = data.records().iter().collect();
        Ok(self.loss_and_gradient(&refs)?.loss)
    }

    /// Runs `epochs * ceil(N / batch_size)` momentum-SGD steps and returns the final
    /// epoch's mean loss (accumulated batch by batch, before each step).
    pub fn train(&mut self, data: &FeatureDataset, config: &TrainConfig) -> Result<f64> {
        config.validate()?;
        if data.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: data.dim(),
            });
        }
        if let Some(r) = data
            .records()
            .iter()
            .find(|r| r.label as usize >= self.classes)
        {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                classes: self.classes,
            });
        }

        let records = data.records();
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut rng = seed::rng(config.seed);
        let mut vel_w = vec![0.0; self.weights.len()];
        let mut vel_b = vec![0.0; self.classes];
        let mut batch: Vec<&FeatureRecord> = Vec::with_capacity(config.batch_size);
        let mut epoch_loss = 0.0;

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| &records[i]));
                let grad = self.loss_and_gradient(&batch)?;
                if !grad.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: grad.loss,
                    });
                }
                loss_sum += grad.loss * batch.len() as f64;

                let (lr, mu) = (config.learning_rate, config.momentum);
                for ((w, v), g) in self.weights.iter_mut().zip(&mut vel_w).zip(&grad.weights) {
                    *v = mu * *v + g;
                    *w -= lr * *v;
                }
                if self.use_bias {
                    for ((w, v), g) in self.bias.iter_mut().zip(&mut vel_b).zip(&grad.bias) {
                        *v = mu * *v + g;
                        *w -= lr * *v;
                    }
                }
                if self
                    .weights
                    .iter()
                    .chain(&self.bias)
                    .any(|w| !w.is_finite())
                {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: grad.loss,
                    });
                }
            }
            epoch_loss = loss_sum / records.len() as f64;
        }
        Ok(epoch_loss)
    }

    /// Adds zero-initialized output rows for new classes.
    pub fn grow(&mut self, new_classes: usize) -> Result<()> {
        if new_classes <= self.classes {
            return Err(Error::invalid(format!(
                "cannot grow from {} to {new_classes} classes",
                self.classes
            )));
        }
        self.weights.resize(new_classes * self.dim, 0.0);
        self.bias.resize(new_classes, 0.0);
        self.classes = new_classes;
        Ok(())
    }

    pub fn evaluate(&self, test: &FeatureDataset) -> Result<Evaluation> {
        evaluate(self, test)
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

    /// CBLC layout (little-endian): magic, `u32` version, `u32` dim, `u32` classes,
    /// `u32` bias flag, row-major `classes x dim` f32 weights, `classes` f32 bias.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CBLC_MAGIC)?;
        w.write_all(&CBLC_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.classes as u32).to_le_bytes())?;
        w.write_all(&(self.use_bias as u32).to_le_bytes())?;
        let weights: Vec<f32> = self.weights.iter().map(|&v| v as f32).collect();
        let bias: Vec<f32> = self.bias.iter().map(|&v| v as f32).collect();
        write_f32s(w, &weights)?;
        write_f32s(w, &bias)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let truncated = |_| Error::Format("CBLC file truncated".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CBLC_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected CBLC")));
        }
        let version = read_u32(&mut r).map_err(truncated)?;
        if version != CBLC_VERSION {
            return Err(Error::Format(format!("unsupported CBLC version {version}")));
        }
        let dim = read_u32(&mut r).map_err(truncated)? as usize;
        let classes = read_u32(&mut r).map_err(truncated)? as usize;
        let use_bias = match read_u32(&mut r).map_err(truncated)? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad bias flag {v}"))),
        };
        let weights = read_f32s(&mut r, dim * classes).map_err(truncated)?;
        let bias = read_f32s(&mut r, classes).map_err(truncated)?;
        Self::from_parts(
            dim,
            weights.into_iter().map(f64::from).collect(),
            bias.into_iter().map(f64::from).collect(),
            use_bias,
        )
        .map_err(|e| Error::Format(e.to_string()))
    }
}

impl Predictor for LinearClassifier {
    /// Argmax over logits; ties go to the lowest class id.
    fn predict(&self, vector: &[f32]) -> Result<u32> {
        self.check_dim(vector)?;
        let mut best = (0usize, f64::NEG_INFINITY);
        for y in 0..self.classes {
            let row = &self.weights[y * self.dim..(y + 1) * self.dim];
            let mut s: f64 = row.iter().zip(vector).map(|(&w, &v)| w * v as f64).sum();
            if self.use_bias {
                s += self.bias[y];
            }
            if s > best.1 {
                best = (y, s);
            }
        }
        Ok(best.0 as u32)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(v: &mut [f64]) {
    let lz = log_sum_exp(v);
    for x in v.iter_mut() {
        *x = (*x - lz).exp();
    }
}
