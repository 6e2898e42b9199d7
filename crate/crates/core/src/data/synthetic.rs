//! Seeded synthetic stand-ins shaped like the four benchmark datasets (feature
//! counts by kind, class ratio). Used for offline tests and desk-scale runs when
//! the real files are not in the cache.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::table::{Column, DatasetId, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub numerical: usize,
    pub categorical: usize,
    pub max_levels: usize,
    /// Expected fraction of positive labels.
    pub positive_rate: f64,
    pub informative_numerical: usize,
    pub informative_categorical: usize,
    /// Scale of the latent logit; larger is easier.
    pub signal: f64,
    /// Emit a skewed severity (like a claim amount) instead of a 0/1 label;
    /// the latent score shifts its log. `positive_rate` is then unused.
    pub continuous_target: bool,
}

impl SyntheticProfile {
    pub fn like(id: DatasetId) -> Self {
        match id {
            DatasetId::Higgs => Self {
                numerical: 28,
                categorical: 0,
                max_levels: 0,
                positive_rate: 0.9 / 1.9,
                informative_numerical: 8,
                informative_categorical: 0,
                signal: 1.6,
                continuous_target: false,
            },
            DatasetId::Census => Self {
                numerical: 7,
                categorical: 33,
                max_levels: 9,
                positive_rate: 1.0 / 14.1,
                informative_numerical: 5,
                informative_categorical: 6,
                signal: 2.2,
                continuous_target: false,
            },
            DatasetId::Credit => Self {
                numerical: 10,
                categorical: 0,
                max_levels: 0,
                positive_rate: 1.0 / 14.4,
                informative_numerical: 6,
                informative_categorical: 0,
                signal: 2.0,
                continuous_target: false,
            },
            DatasetId::Insurance => Self {
                numerical: 14,
                categorical: 116,
                max_levels: 6,
                positive_rate: 0.1,
                informative_numerical: 5,
                informative_categorical: 8,
                signal: 2.2,
                continuous_target: true,
            },
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws `n` rows. The label is Bernoulli on a smooth latent score built from
/// saturating ramps of the informative numerical features, one pairwise
/// interaction and per-level categorical effects; the intercept is solved so
/// the expected positive rate matches the profile.
pub fn synthetic_table(profile: &SyntheticProfile, n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut latent = vec![0.0f64; n];
    let mut standardized: Vec<Vec<f64>> = Vec::new();

    for j in 0..profile.numerical {
        names.push(format!("num_{j}"));
        let (values, z): (Vec<f64>, Vec<f64>) = match j % 3 {
            0 => {
                let d = Normal::new(0.0, 1.0).expect("valid normal");
                (0..n)
                    .map(|_| {
                        let v: f64 = d.sample(&mut rng);
                        (v, v)
                    })
                    .unzip()
            }
            1 => {
                let d = LogNormal::new(0.0, 0.6).expect("valid lognormal");
                (0..n)
                    .map(|_| {
                        let v: f64 = d.sample(&mut rng);
                        (v, (v.ln()) / 0.6)
                    })
                    .unzip()
            }
            _ => (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let v = (u * 12.0).floor();
                    (v, (v - 5.5) / 3.45)
                })
                .unzip(),
        };
        if j < profile.informative_numerical {
            let weight = profile.signal * (0.6 + 0.8 * rng.random::<f64>());
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let center: f64 = rng.random_range(-0.8..0.8);
            let width: f64 = rng.random_range(0.4..1.2);
            for (l, zi) in latent.iter_mut().zip(&z) {
                *l += sign * weight * ((zi - center) / width).tanh() * 0.5;
            }
        }
        standardized.push(z);
        columns.push(Column::Numerical(values));
    }
    if profile.informative_numerical >= 2 {
        let w = profile.signal * 0.5;
        for i in 0..n {
            latent[i] += w * standardized[0][i].tanh() * standardized[1][i].tanh();
        }
    }

    for j in 0..profile.categorical {
        names.push(format!("cat_{j}"));
        let n_levels = rng.random_range(2..=profile.max_levels.max(2));
        let popularity: Vec<f64> = (0..n_levels).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = popularity.iter().sum();
        let effects: Vec<f64> = if j < profile.informative_categorical {
            (0..n_levels)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e * profile.signal * 0.45
                })
                .collect()
        } else {
            vec![0.0; n_levels]
        };
        let mut values = Vec::with_capacity(n);
        for l in latent.iter_mut() {
            let mut u = rng.random::<f64>() * total;
            let mut level = n_levels - 1;
            for (k, p) in popularity.iter().enumerate() {
                if u < *p {
                    level = k;
                    break;
                }
                u -= p;
            }
            *l += effects[level];
            values.push(format!("L{level}"));
        }
        columns.push(Column::Categorical(values));
    }

    // intercept by bisection on the expected positive rate
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let rate = latent.iter().map(|l| sigmoid(3.0 * (l - mid))).sum::<f64>() / n.max(1) as f64;
        if rate > profile.positive_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);
    if profile.continuous_target {
        let target = latent
            .iter()
            .map(|l| {
                let u: f64 = rng.random_range(1e-12..1.0);
                (3.0 * l + (u / (1.0 - u)).ln() + 7.0).exp()
            })
            .collect();
        return Table::new(names, columns, target).expect("synthetic columns are aligned");
    }
    let target = latent
        .iter()
        .map(|l| f64::from(rng.random_bool(sigmoid(3.0 * (l - intercept)))))
        .collect();

    Table::new(names, columns, target).expect("synthetic columns are aligned")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_profile() {
        let p = SyntheticProfile::like(DatasetId::Census);
        let t = synthetic_table(&p, 3000, 1);
        assert_eq!(t.n_features(), 40);
        assert_eq!(t.columns.iter().filter(|c| c.is_numerical()).count(), 7);
        let pos = t.target.iter().filter(|&&y| y == 1.0).count() as f64 / 3000.0;
        assert!((pos - p.positive_rate).abs() < 0.03, "{pos}");
    }

    #[test]
    fn severity_target_binarizes_to_a_decile() {
        let p = SyntheticProfile::like(DatasetId::Insurance);
        for seed in 0..4 {
            let t = synthetic_table(&p, 2000, seed);
            assert!(t.target.iter().all(|&y| y > 0.0));
            let labels = crate::data::binarize_insurance_target(&t.target).unwrap();
            let pos = labels.iter().filter(|&&y| y == 1).count();
            assert!((190..=210).contains(&pos), "seed {seed}: {pos}");
        }
    }

    #[test]
    fn seeded() {
        let p = SyntheticProfile::like(DatasetId::Higgs);
        assert_eq!(synthetic_table(&p, 200, 5), synthetic_table(&p, 200, 5));
        assert_ne!(synthetic_table(&p, 200, 5), synthetic_table(&p, 200, 6));
    }
}
