//! Fixtures shared by the benches in `benches/`.

use cbcl_core::harness::{generate_synthetic, SyntheticConfig};
use cbcl_core::FeatureRecord;

/// `n` feature vectors of one synthetic class.
pub fn class_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let (train, _) = generate_synthetic(&SyntheticConfig {
        classes: 1,
        dim,
        train_per_class: n,
        test_per_class: 1,
        seed,
        ..Default::default()
    })
    .expect("valid synthetic config");
    train.into_records().into_iter().map(|r| r.vector).collect()
}

/// Query vectors drawn from `classes` synthetic classes.
pub fn queries(n: usize, classes: usize, dim: usize, seed: u64) -> Vec<FeatureRecord> {
    let (_, test) = generate_synthetic(&SyntheticConfig {
        classes,
        dim,
        train_per_class: 1,
        test_per_class: n.div_ceil(classes),
        seed,
        ..Default::default()
    })
    .expect("valid synthetic config");
    let mut records = test.into_records();
    records.truncate(n);
    records
}
