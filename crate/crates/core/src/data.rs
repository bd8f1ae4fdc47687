//! Deterministic train/test splitting and seeded batch iteration.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{derive, stream, StreamId};

/// Split proportions and the shuffle seed. Defaults to 9:1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Shuffles deterministically and partitions into disjoint, exhaustive
/// train/test index sets with `|train| = round(f * N)`, kept within
/// `[1, N-1]` so neither side is empty.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::config("split requires at least 2 samples"));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config("train_fraction must be in (0, 1)"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(spec.seed, StreamId::Shuffle);
    order.shuffle(&mut rng);
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = order.split_off(n_train);
    Ok((order, test))
}

/// Splits a slice of samples by cloning into the two partitions.
pub fn split<T: Clone>(samples: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let (train_idx, test_idx) = split_indices(samples.len(), spec)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Seeded per-epoch batch schedule over `0..n`: every index appears
/// exactly once per epoch and the final short batch is emitted.
pub fn batches(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(derive(epoch_seed, 0xba7c), StreamId::Shuffle);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ninety_ten_split_sizes() {
        let (train, test) = split_indices(100, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (90, 10));
        let (train, test) = split_indices(10, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (mut train, test) = split_indices(37, &SplitSpec::default()).unwrap();
        train.extend(&test);
        train.sort_unstable();
        assert_eq!(train, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn split_determinism_per_seed() {
        let a = split_indices(50, &SplitSpec { seed: 3, ..SplitSpec::default() }).unwrap();
        let b = split_indices(50, &SplitSpec { seed: 3, ..SplitSpec::default() }).unwrap();
        assert_eq!(a, b);
        let c = split_indices(50, &SplitSpec { seed: 4, ..SplitSpec::default() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        assert!(split_indices(1, &SplitSpec::default()).is_err());
        assert!(split_indices(10, &SplitSpec { train_fraction: 1.0, seed: 0 }).is_err());
    }

    #[test]
    fn batch_shapes_and_multiset() {
        let b = batches(10, 4, 7).unwrap();
        let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
        let mut all: Vec<usize> = b.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batch_order_fixed_by_epoch_seed() {
        assert_eq!(batches(20, 6, 1).unwrap(), batches(20, 6, 1).unwrap());
        assert_ne!(batches(20, 6, 1).unwrap(), batches(20, 6, 2).unwrap());
    }
}
