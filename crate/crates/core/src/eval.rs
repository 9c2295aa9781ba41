use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::Result;

/// Anything that maps a feature vector to a class id.
pub trait Predictor {
    fn predict(&self, vector: &[f32]) -> Result<u32>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, vector: &[f32]) -> Result<u32> {
        (**self).predict(vector)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, vector: &[f32]) -> Result<u32> {
        (**self).predict(vector)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Top-1 accuracy over all records.
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: BTreeMap<u32, f64>,
}

impl Evaluation {
    /// Accuracy restricted to records whose label passes `keep`; `None` if there are none.
    pub fn subset_accuracy(
        &self,
        counts: &BTreeMap<u32, usize>,
        keep: impl Fn(u32) -> bool,
    ) -> Option<f64> {
        let (mut hit, mut n) = (0.0, 0usize);
        for (&class, &acc) in &self.per_class {
            if keep(class) {
                let c = counts[&class];
                hit += acc * c as f64;
                n += c;
            }
        }
        (n > 0).then(|| hit / n as f64)
    }
}

pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, test: &FeatureDataset) -> Result<Evaluation> {
    let mut per: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for r in test.records() {
        let hit = predictor.predict(&r.vector)? == r.label;
        let e = per.entry(r.label).or_default();
        e.1 += 1;
        if hit {
            e.0 += 1;
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        per_class: per
            .into_iter()
            .map(|(k, (c, n))| (k, c as f64 / n as f64))
            .collect(),
    })
}
