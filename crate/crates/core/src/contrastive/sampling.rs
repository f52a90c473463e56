//! Drawing training batches from a pool of pairs at several levels.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ContrastiveError;
use crate::hierarchy::GranularityLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchSampling {
    /// Uniform over the union of all levels.
    #[default]
    Uniform,
    /// Each level contributes in proportion to its share of the pool,
    /// rounded by largest remainder.
    Stratified,
}

fn check_size(available: usize, requested: usize) -> Result<(), ContrastiveError> {
    if available == 0 || requested > available {
        return Err(ContrastiveError::InsufficientPairs { requested, available });
    }
    Ok(())
}

/// `b` distinct indices into `levels`, drawn uniformly without replacement.
pub fn sample_mixed_batch(levels: &[GranularityLevel], b: usize, seed: u64) -> Result<Vec<usize>, ContrastiveError> {
    check_size(levels.len(), b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, levels.len(), b).into_vec())
}

/// `b` distinct indices with per-level counts fixed by the pool's level
/// proportions, returned in shuffled order.
pub fn sample_stratified_batch(
    levels: &[GranularityLevel],
    b: usize,
    seed: u64,
) -> Result<Vec<usize>, ContrastiveError> {
    check_size(levels.len(), b)?;
    let n = levels.len();
    let pools: Vec<Vec<usize>> = GranularityLevel::ALL
        .iter()
        .map(|&l| (0..n).filter(|&i| levels[i] == l).collect())
        .collect();

    let mut quota: Vec<usize> = pools.iter().map(|p| b * p.len() / n).collect();
    let mut remainders: Vec<(usize, usize)> = pools.iter().enumerate().map(|(k, p)| (b * p.len() % n, k)).collect();
    // largest remainder first, ties to the coarser level
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = b - quota.iter().sum::<usize>();
    for &(_, k) in remainders.iter().take(short) {
        quota[k] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(b);
    for (pool, q) in pools.iter().zip(quota) {
        out.extend(index::sample(&mut rng, pool.len(), q).into_iter().map(|i| pool[i]));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

pub fn sample_batch(
    levels: &[GranularityLevel],
    b: usize,
    seed: u64,
    mode: BatchSampling,
) -> Result<Vec<usize>, ContrastiveError> {
    match mode {
        BatchSampling::Uniform => sample_mixed_batch(levels, b, seed),
        BatchSampling::Stratified => sample_stratified_batch(levels, b, seed),
    }
}
