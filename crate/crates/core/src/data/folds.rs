//! Case-level cross-validation splits.
//!
//! Folds partition *source image ids*, never augmented draws, so no
//! augmented view of a validation case can leak into training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AvError, Result};
use crate::util::mix2;

/// Split ids into `k` folds of (train, validation) id lists. Validation
/// folds are disjoint, cover every id, and differ in size by at most one.
pub fn split_folds(ids: &[String], k: usize, seed: u64) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if k < 2 {
        return Err(AvError::arg(format!("fold count must be at least 2, got {k}")));
    }
    if k > ids.len() {
        return Err(AvError::arg(format!(
            "fold count {k} exceeds number of ids {}",
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(mix2(seed, 0xF0_1D5));
    shuffled.shuffle(&mut rng);

    let n = shuffled.len();
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let val: Vec<String> = shuffled[start..start + len].to_vec();
        let train: Vec<String> = shuffled[..start]
            .iter()
            .chain(&shuffled[start + len..])
            .cloned()
            .collect();
        folds.push((train, val));
        start += len;
    }
    Ok(folds)
}
