//! Class-balanced mini-batch construction for imbalanced binary data.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Build one epoch of exactly class-balanced batches over sample indices.
///
/// Every batch holds `batch_size / 2` indices of each class. The majority
/// class is shuffled and dealt out in chunks so each of its samples appears
/// at least once per epoch (the final chunk wraps around); the minority class
/// is sampled with replacement. The epoch therefore has
/// `ceil(majority / (batch_size / 2))` batches. Deterministic given `seed`.
pub fn balanced_batches(
    is_positive: &[bool],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "batch size {batch_size} must be even and at least 2"
        )));
    }
    let positives: Vec<usize> = (0..is_positive.len()).filter(|&i| is_positive[i]).collect();
    let negatives: Vec<usize> = (0..is_positive.len()).filter(|&i| !is_positive[i]).collect();
    if positives.is_empty() {
        return Err(Error::MissingClass("positive".into()));
    }
    if negatives.is_empty() {
        return Err(Error::MissingClass("negative".into()));
    }

    let (majority, minority) = if negatives.len() >= positives.len() {
        (negatives, positives)
    } else {
        (positives, negatives)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = majority.clone();
    order.shuffle(&mut rng);

    let half = batch_size / 2;
    let n_batches = order.len().div_ceil(half);
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for k in 0..half {
            batch.push(order[(b * half + k) % order.len()]);
        }
        for _ in 0..half {
            batch.push(minority[rng.random_range(0..minority.len())]);
        }
        batches.push(batch);
    }
    Ok(batches)
}
