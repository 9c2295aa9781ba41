//! Seed derivation and the generator used for every random draw in the crate.
//!
//! All randomness comes from ChaCha8 (`rand_chacha` 0.9), a 64-bit-counter stream cipher
//! generator. Independent streams are obtained by hashing a parent seed together with a
//! path of integers (seed, class, cluster, ...), so results never depend on the order in
//! which streams are consumed or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of integers.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, path: &[u64]) -> Rng {
    rng(derive(seed, path))
}
