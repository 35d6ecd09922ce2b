//! Batch construction: plain shuffled batches and the rotating balanced
//! sampler.
//!
//! A rotating epoch has one batch per class-1 sample. Each batch holds two
//! class-0 samples, one class-1 sample and one class-2 sample. Class 2 is
//! upsampled to the class-1 count. Class 0 is read from a fixed seeded base
//! order through a cursor that keeps advancing across epochs (modulo `N0`),
//! so consecutive epochs see consecutive slices of the majority class.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};

pub const ROTATING_BATCH_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingMode {
    Standard,
    Rotating,
}

impl BatchingMode {
    pub fn name(self) -> &'static str {
        match self {
            BatchingMode::Standard => "standard",
            BatchingMode::Rotating => "rotating",
        }
    }
}

/// Dataset indices grouped by severity class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndexSets {
    pub sets: [Vec<usize>; 3],
}

impl ClassIndexSets {
    /// Groups `indices` by `label_of(index)`.
    pub fn from_labels(indices: &[usize], label_of: impl Fn(usize) -> usize) -> Result<Self> {
        let mut sets: [Vec<usize>; 3] = Default::default();
        for &i in indices {
            let c = label_of(i);
            if c >= 3 {
                return Err(Error::Label { label: c, classes: 3 });
            }
            sets[c].push(i);
        }
        Ok(Self { sets })
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.sets[0].len(), self.sets[1].len(), self.sets[2].len()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub mode: BatchingMode,
    pub epoch: u64,
    pub seed: u64,
    pub batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// Shuffles `0..n` with the `(seed, epoch)` sampler stream and chunks it;
/// the last batch may be short.
pub fn standard_epoch(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchPlan> {
    if n == 0 || batch_size == 0 {
        return Err(Error::Argument(format!(
            "standard batching needs n >= 1 and batch_size >= 1, got {n} and {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, label::SAMPLER, &[epoch]));
    Ok(BatchPlan {
        mode: BatchingMode::Standard,
        epoch,
        seed,
        batches: order.chunks(batch_size).map(<[usize]>::to_vec).collect(),
    })
}

/// Resamples class-2 indices to exactly `target` entries.
///
/// With `target >= N2` every index is repeated `target / N2` times and the
/// remainder is drawn without replacement, so per-index counts differ by at
/// most one. With `target < N2` a subsample without replacement is taken.
pub fn upsample_class2(class2: &[usize], target: usize, seed: u64, epoch: u64) -> Result<Vec<usize>> {
    if class2.is_empty() {
        return Err(Error::Sampler("class 2 has no samples to upsample".into()));
    }
    let mut stream = rng::stream(seed, label::UPSAMPLE, &[epoch]);
    let copies = target / class2.len();
    let remainder = target % class2.len();
    let mut out = Vec::with_capacity(target);
    for _ in 0..copies {
        out.extend_from_slice(class2);
    }
    out.extend(class2.choose_multiple(&mut stream, remainder).copied());
    out.shuffle(&mut stream);
    Ok(out)
}

/// Positions in the class-0 base order read by each draw of `epoch`.
///
/// Draw `j` of epoch `e` reads position `(e · D0 + j) mod N0`, `D0 = 2 · N1`.
pub fn class0_positions(n0: usize, n1: usize, epoch: u64) -> Vec<usize> {
    let draws = 2 * n1 as u128;
    let start = (u128::from(epoch) * draws) % n0 as u128;
    (0..draws)
        .map(|j| ((start + j) % n0 as u128) as usize)
        .collect()
}

/// Fixed seeded base order of class 0, shared by all epochs.
fn class0_base_order(class0: &[usize], seed: u64) -> Vec<usize> {
    let mut base = class0.to_vec();
    base.shuffle(&mut rng::stream(seed, label::SAMPLER, &[u64::MAX]));
    base
}

/// Rotating balanced plan: `N1` batches of `[c0, c0, c1, c2]`.
pub fn rotating_epoch(sets: &ClassIndexSets, seed: u64, epoch: u64) -> Result<BatchPlan> {
    let [n0, n1, n2] = sets.sizes();
    if n0 == 0 || n1 == 0 || n2 == 0 {
        return Err(Error::Sampler(format!(
            "rotating batching needs every class present, got sizes ({n0}, {n1}, {n2})"
        )));
    }
    let base = class0_base_order(&sets.sets[0], seed);
    let positions = class0_positions(n0, n1, epoch);

    let mut class1 = sets.sets[1].clone();
    class1.shuffle(&mut rng::stream(seed, label::SAMPLER, &[epoch, 1]));
    let class2 = upsample_class2(&sets.sets[2], n1, seed, epoch)?;

    let batches = (0..n1)
        .map(|b| {
            vec![
                base[positions[2 * b]],
                base[positions[2 * b + 1]],
                class1[b],
                class2[b],
            ]
        })
        .collect();
    Ok(BatchPlan {
        mode: BatchingMode::Rotating,
        epoch,
        seed,
        batches,
    })
}
