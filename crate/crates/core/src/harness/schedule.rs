use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::Shots;
use super::streams;
use crate::error::{Error, Result};
use crate::seed;

/// Seeded class order split into fixed-size increments; the last one may be smaller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementSchedule {
    pub class_order: Vec<u32>,
    pub classes_per_increment: usize,
    pub shots: Shots,
}

impl IncrementSchedule {
    pub fn new(
        classes: impl IntoIterator<Item = u32>,
        classes_per_increment: usize,
        shots: Shots,
        seed: u64,
    ) -> Result<Self> {
        if classes_per_increment == 0 {
            return Err(Error::invalid("classes per increment must be at least 1"));
        }
        let mut class_order: Vec<u32> = classes.into_iter().collect();
        class_order.sort_unstable();
        class_order.dedup();
        if class_order.is_empty() {
            return Err(Error::Empty("no classes to schedule"));
        }
        class_order.shuffle(&mut seed::rng_for(seed, &[streams::CLASS_ORDER]));
        Ok(Self {
            class_order,
            classes_per_increment,
            shots,
        })
    }

    pub fn increments(&self) -> impl Iterator<Item = &[u32]> {
        self.class_order.chunks(self.classes_per_increment)
    }

    pub fn num_increments(&self) -> usize {
        self.class_order.len().div_ceil(self.classes_per_increment)
    }
}
