use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NsdtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl SplitTag {
    pub fn as_char(self) -> char {
        match self {
            SplitTag::Train => 'r',
            SplitTag::Valid => 'v',
            SplitTag::Test => 't',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'r' => Some(SplitTag::Train),
            'v' => Some(SplitTag::Valid),
            't' => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// Fraction of a predefined training split withheld for validation.
pub const PREDEFINED_VALID_FRACTION: f64 = 0.1;

/// Tags `n` rows as train/valid/test.
///
/// Without a predefined split the rows are shuffled and cut by `ratios`
/// (train, valid, test). With one, test rows are left alone and 10% of the
/// training rows become validation.
pub fn split_dataset(
    n: usize,
    ratios: [f64; 3],
    seed: u64,
    predefined_test: Option<&[bool]>,
) -> Result<Vec<SplitTag>> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(NsdtError::InvalidRatios(sum));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = vec![SplitTag::Train; n];
    match predefined_test {
        Some(mask) => {
            if mask.len() != n {
                return Err(NsdtError::Format(format!(
                    "test mask has {} entries for {n} rows",
                    mask.len()
                )));
            }
            let mut train: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
            for (i, &is_test) in mask.iter().enumerate() {
                if is_test {
                    tags[i] = SplitTag::Test;
                }
            }
            train.shuffle(&mut rng);
            let n_valid = (PREDEFINED_VALID_FRACTION * train.len() as f64).round() as usize;
            for &i in &train[..n_valid] {
                tags[i] = SplitTag::Valid;
            }
        }
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let n_train = (ratios[0] * n as f64).round() as usize;
            let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
            for &i in &order[n_train..n_train + n_valid] {
                tags[i] = SplitTag::Valid;
            }
            for &i in &order[n_train + n_valid..] {
                tags[i] = SplitTag::Test;
            }
        }
    }
    Ok(tags)
}

/// Stratified row sample of exactly `cap` rows (or all rows when `cap >= n`), in
/// ascending row order.
pub fn stratified_subsample(labels: &[u8], cap: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if cap >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[usize::from(y != 0)].push(i);
    }
    let take_pos = ((by_class[1].len() as f64 * cap as f64 / n as f64).round() as usize)
        .min(by_class[1].len())
        .min(cap);
    let take_neg = (cap - take_pos).min(by_class[0].len());
    let mut rows = Vec::with_capacity(cap);
    for (class, take) in [(0, take_neg), (1, take_pos)] {
        let pool = &mut by_class[class];
        pool.shuffle(&mut rng);
        rows.extend_from_slice(&pool[..take]);
    }
    rows.sort_unstable();
    rows
}
