use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::cluster::CovarianceMode;
use crate::error::{Error, Result};
use crate::memory::{Budget, MergeCovariance, ReductionPolicy};
use crate::rehearsal::{DEFAULT_FSIL_PER_CLASS, DEFAULT_RIDGE};
use crate::voting::VotingConfig;

pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Agg-Var clusters with full covariance, pseudo-rehearsal, linear classifier.
    CbclPr,
    /// As `CbclPr` with diagonal covariance.
    CbclPrDiag,
    /// Agg-Var clusters, weighted-voting prediction.
    Cbcl,
    /// Nearest class mean.
    Ncm,
    /// k-means clusters, pseudo-rehearsal, linear classifier.
    KmeansPr,
    /// k-means clusters, weighted-voting prediction.
    Kmeans,
    /// Fine-tuning on new-class data only.
    Ft,
    /// Batch learning on all real data seen so far.
    Flb,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::CbclPr,
        Method::CbclPrDiag,
        Method::Cbcl,
        Method::Ncm,
        Method::KmeansPr,
        Method::Kmeans,
        Method::Ft,
        Method::Flb,
    ];

    /// Whether the method keeps a cluster memory.
    pub fn uses_memory(self) -> bool {
        !matches!(self, Method::Ft | Method::Flb)
    }

    pub fn uses_kmeans(self) -> bool {
        matches!(self, Method::KmeansPr | Method::Kmeans)
    }

    pub fn uses_rehearsal(self) -> bool {
        matches!(self, Method::CbclPr | Method::CbclPrDiag | Method::KmeansPr)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::CbclPr => "cbcl-pr",
            Method::CbclPrDiag => "cbcl-pr-diag",
            Method::Cbcl => "cbcl",
            Method::Ncm => "ncm",
            Method::KmeansPr => "kmeans-pr",
            Method::Kmeans => "kmeans",
            Method::Ft => "ft",
            Method::Flb => "flb",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "cbcl-pr-d" => return Ok(Method::CbclPrDiag),
            "k-means-pr" => return Ok(Method::KmeansPr),
            "k-means" => return Ok(Method::Kmeans),
            _ => {}
        }
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shots {
    All,
    Few(usize),
}

impl Shots {
    pub fn take(self, available: usize) -> usize {
        match self {
            Shots::All => available,
            Shots::Few(n) => n.min(available),
        }
    }

    pub fn is_few(self) -> bool {
        matches!(self, Shots::Few(_))
    }
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Shots::All),
            n => match n.parse::<usize>() {
                Ok(k) if k > 0 => Ok(Shots::Few(k)),
                _ => Err(Error::invalid(format!(
                    "shots must be a positive integer or 'all', got '{s}'"
                ))),
            },
        }
    }
}

/// Classifier hyperparameters shared by every increment.
///
/// Increment `i` (0-based) trains for `base_epochs + epoch_step * i` epochs, for the
/// rehearsal classifiers and the batch baseline alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub base_epochs: usize,
    pub epoch_step: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub flb_learning_rate: f64,
    pub flb_batch_size: usize,
    pub bias: bool,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            base_epochs: 25,
            epoch_step: 2,
            learning_rate: 0.01,
            batch_size: 64,
            momentum: 0.9,
            flb_learning_rate: 0.001,
            flb_batch_size: 8,
            bias: true,
        }
    }
}

impl TrainingSchedule {
    pub fn epochs(&self, increment: usize) -> usize {
        self.base_epochs + self.epoch_step * increment
    }

    pub fn replay(&self, increment: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(increment),
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed,
        }
    }

    pub fn batch_baseline(&self, increment: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(increment),
            learning_rate: self.flb_learning_rate,
            momentum: self.momentum,
            batch_size: self.flb_batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub distance_threshold: f64,
    pub budget: Budget,
    pub reduction: ReductionPolicy,
    /// Covariance mode for every method except `CbclPrDiag`, which is always diagonal.
    pub cov: CovarianceMode,
    pub fsil_per_class: usize,
    /// `Few(n)` selects the few-shot protocol: the first `n` records per class, and
    /// classifiers trained on pseudo-exemplars only.
    pub shots: Shots,
    pub classes_per_increment: usize,
    pub seeds: Vec<u64>,
    pub training: TrainingSchedule,
    pub voting: VotingConfig,
    /// Clusters per class for the k-means backends; `None` matches Agg-Var's count.
    pub kmeans_k: Option<usize>,
    pub ridge: f64,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::CbclPr,
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            budget: Budget::Unlimited,
            reduction: ReductionPolicy::default(),
            cov: CovarianceMode::Full,
            fsil_per_class: DEFAULT_FSIL_PER_CLASS,
            shots: Shots::All,
            classes_per_increment: 10,
            seeds: (0..10).collect(),
            training: TrainingSchedule::default(),
            voting: VotingConfig::default(),
            kmeans_k: None,
            ridge: DEFAULT_RIDGE,
            train: None,
            test: None,
        }
    }
}

impl ExperimentConfig {
    pub fn covariance_mode(&self) -> CovarianceMode {
        match self.method {
            Method::CbclPrDiag => CovarianceMode::Diagonal,
            _ => self.cov,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes_per_increment == 0 {
            return Err(Error::invalid("classes-per-increment must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.distance_threshold.is_nan() || self.distance_threshold < 0.0 {
            return Err(Error::invalid("distance-threshold must be non-negative"));
        }
        if self.fsil_per_class == 0 {
            return Err(Error::invalid("fsil-per-class must be at least 1"));
        }
        if self.voting.top_n == 0 {
            return Err(Error::invalid("top-n must be at least 1"));
        }
        if self.kmeans_k == Some(0) {
            return Err(Error::invalid("kmeans-k must be at least 1"));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Keys match the CLI flag names without dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::invalid(format!("{key}: invalid {what} '{value}'"));
        let float = || value.parse::<f64>().map_err(|_| bad("number"));
        let int = || value.parse::<usize>().map_err(|_| bad("integer"));
        match key.trim() {
            "method" => self.method = value.parse()?,
            "classes-per-increment" => self.classes_per_increment = int()?,
            "shots" => self.shots = value.parse()?,
            "distance-threshold" => self.distance_threshold = float()?,
            "budget" => self.budget = value.parse()?,
            "cov" => self.cov = value.parse()?,
            "fsil-per-class" => self.fsil_per_class = int()?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "train" => self.train = Some(PathBuf::from(value)),
            "test" => self.test = Some(PathBuf::from(value)),
            "reduction" => {
                self.reduction = match value {
                    "merge" | "reduce" => ReductionPolicy::Merge(MergeCovariance::Weighted),
                    "merge-pooled" | "pooled" => ReductionPolicy::Merge(MergeCovariance::Pooled),
                    "remove" => ReductionPolicy::Remove,
                    _ => return Err(bad("reduction policy")),
                }
            }
            "epochs" => self.training.base_epochs = int()?,
            "epoch-step" => self.training.epoch_step = int()?,
            "lr" => self.training.learning_rate = float()?,
            "batch-size" => self.training.batch_size = int()?,
            "momentum" => self.training.momentum = float()?,
            "flb-lr" => self.training.flb_learning_rate = float()?,
            "flb-batch-size" => self.training.flb_batch_size = int()?,
            "bias" => self.training.bias = value.parse().map_err(|_| bad("boolean"))?,
            "top-n" => self.voting.top_n = int()?,
            "kmeans-k" => self.kmeans_k = Some(int()?),
            "ridge" => self.ridge = float()?,
            other => return Err(Error::invalid(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a `key=value` file: one setting per line, `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected key=value", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }
}

/// Accepts `3`, `1,4,9`, or a half-open range `0..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::invalid(format!("invalid seed list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|_| bad()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.distance_threshold, 20.0);
        assert_eq!(c.fsil_per_class, 40);
        assert_eq!(c.seeds.len(), 10);
        assert_eq!(c.training.epochs(0), 25);
        assert_eq!(c.training.epochs(3), 31);
        assert_eq!(c.training.momentum, 0.9);
        assert_eq!(
            (c.training.learning_rate, c.training.batch_size),
            (0.01, 64)
        );
        assert_eq!(
            (c.training.flb_learning_rate, c.training.flb_batch_size),
            (0.001, 8)
        );
    }

    #[test]
    fn kv_parsing() {
        let mut c = ExperimentConfig::default();
        c.apply_kv(
            "# comment\nmethod = cbcl-pr-diag\nshots=5\nbudget=32\nseeds=0..3\nreduction=remove\ncov=diag\n",
        )
        .unwrap();
        assert_eq!(c.method, Method::CbclPrDiag);
        assert_eq!(c.shots, Shots::Few(5));
        assert_eq!(c.budget, Budget::Clusters(32));
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.reduction, ReductionPolicy::Remove);
        assert!(c.apply_kv("nonsense").is_err());
        assert!(c.apply_kv("colour=blue").is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("CBCL-PR_D".parse::<Method>().unwrap(), Method::CbclPrDiag);
        assert!("icarl".parse::<Method>().is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert_eq!(parse_seeds("1, 5,9").unwrap(), vec![1, 5, 9]);
        assert_eq!(parse_seeds("2..5").unwrap(), vec![2, 3, 4]);
        assert!(parse_seeds("5..2").is_err());
    }
}
