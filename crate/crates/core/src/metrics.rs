use serde::{Deserialize, Serialize};

/// Mean of per-class recalls. A class absent from `truth` is skipped; with
/// a single class present the score is that class's recall.
pub fn balanced_accuracy(truth: &[u8], pred: &[u8]) -> f64 {
    let mut hit = [0usize; 2];
    let mut total = [0usize; 2];
    for (&t, &p) in truth.iter().zip(pred) {
        let c = usize::from(t != 0);
        total[c] += 1;
        hit[c] += usize::from((p != 0) == (t != 0));
    }
    let recalls: Vec<f64> = (0..2)
        .filter(|&c| total[c] > 0)
        .map(|c| hit[c] as f64 / total[c] as f64)
        .collect();
    if recalls.is_empty() {
        return 0.0;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Relative drop in percent: `(before - after) / before * 100`.
pub fn robustness_drop(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        return 0.0;
    }
    (before - after) / before * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]), 0.75);
        assert!((robustness_drop(0.725, 0.694) - 4.28).abs() < 0.005);
        assert!((robustness_drop(0.778, 0.750) - 3.60).abs() < 0.005);
        assert_eq!(robustness_drop(0.7, 0.7), 0.0);
        let s = summarize(&[0.8; 5]);
        assert_eq!((s.mean, s.std), (0.8, 0.0));
    }

    proptest! {
        #[test]
        fn constant_classifier_is_half(truth in prop::collection::vec(0u8..2, 2..200), c in 0u8..2) {
            prop_assume!(truth.contains(&0) && truth.contains(&1));
            let pred = vec![c; truth.len()];
            prop_assert_eq!(balanced_accuracy(&truth, &pred), 0.5);
        }

        #[test]
        fn drop_is_scale_invariant(b in 0.1f64..1.0, a in 0.0f64..1.0, k in 0.5f64..100.0) {
            prop_assert!((robustness_drop(b, a) - robustness_drop(k * b, k * a)).abs() < 1e-9);
        }
    }
}
