use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::table::{Column, Table};
use crate::error::{NsdtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub feature_fraction: f64,
    pub input_fraction: f64,
    pub std_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            feature_fraction: 0.3,
            input_fraction: 0.5,
            std_fraction: 0.15,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_fraction", self.feature_fraction),
            ("input_fraction", self.input_fraction),
            ("std_fraction", self.std_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(NsdtError::InvalidConfig(format!("{name} = {v} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorruptionDetail {
    Numerical {
        noise_mean: f64,
        noise_std: f64,
        zeroed: usize,
    },
    Categorical {
        replaced: usize,
        level_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptedFeature {
    pub index: usize,
    pub name: String,
    #[serde(flatten)]
    pub detail: CorruptionDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub config: NoiseConfig,
    pub features: Vec<CorruptedFeature>,
}

impl NoiseReport {
    pub fn corrupted_indices(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.index).collect()
    }
}

/// Corrupts `ceil(feature_fraction * #features)` uniformly chosen raw columns.
///
/// Numerical columns get `N(max, std_fraction * |max|)` noise added on all but
/// `floor((1 - input_fraction) n)` rows (those noise entries are zeroed).
/// Categorical columns get the same number of rows resampled uniformly from
/// the column's level set.
pub fn inject_noise(table: &Table, config: &NoiseConfig) -> Result<(Table, NoiseReport)> {
    config.validate()?;
    let n_features = table.n_features();
    let k = (config.feature_fraction * n_features as f64).ceil() as usize;
    if k == 0 {
        return Err(NsdtError::NoFeaturesSelected);
    }
    let k = k.min(n_features);
    let n = table.n_rows();
    let untouched = ((1.0 - config.input_fraction) * n as f64).floor() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chosen = sample(&mut rng, n_features, k).into_vec();
    chosen.sort_unstable();

    let mut out = table.clone();
    let mut features = Vec::with_capacity(k);
    for &f in &chosen {
        let detail = match &mut out.columns[f] {
            Column::Numerical(values) => {
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let max = if max.is_finite() { max } else { 0.0 };
                let std = config.std_fraction * max.abs();
                let normal = Normal::new(max, std).map_err(|e| {
                    NsdtError::InvalidConfig(format!("noise distribution: {e}"))
                })?;
                let mut noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                for i in sample(&mut rng, n, untouched) {
                    noise[i] = 0.0;
                }
                for (v, e) in values.iter_mut().zip(&noise) {
                    *v += e;
                }
                CorruptionDetail::Numerical {
                    noise_mean: max,
                    noise_std: std,
                    zeroed: untouched,
                }
            }
            Column::Categorical(values) => {
                let levels = Column::Categorical(values.clone()).distinct_levels();
                let replaced = n - untouched;
                if !levels.is_empty() {
                    for i in sample(&mut rng, n, replaced) {
                        values[i] = levels[rng.random_range(0..levels.len())].clone();
                    }
                }
                CorruptionDetail::Categorical {
                    replaced,
                    level_count: levels.len(),
                }
            }
        };
        features.push(CorruptedFeature {
            index: f,
            name: table.names[f].clone(),
            detail,
        });
    }
    Ok((
        out,
        NoiseReport {
            config: *config,
            features,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_table(n: usize) -> Table {
        Table::new(
            vec!["x".into(), "c".into()],
            vec![
                Column::Numerical((0..n).map(|i| (i % 11) as f64 * 1.0 - 0.0).collect()),
                Column::Categorical(
                    (0..n)
                        .map(|i| ["a", "b", "c"][i % 3].to_string())
                        .collect(),
                ),
            ],
            (0..n).map(|i| (i % 2) as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn numerical_noise_parameters_and_zeroing() {
        let table = mixed_table(1000);
        let cfg = NoiseConfig {
            feature_fraction: 1.0,
            seed: 3,
            ..NoiseConfig::default()
        };
        let (noisy, report) = inject_noise(&table, &cfg).unwrap();
        let detail = &report.features[0].detail;
        match detail {
            CorruptionDetail::Numerical {
                noise_mean,
                noise_std,
                zeroed,
            } => {
                assert_eq!(*noise_mean, 10.0);
                assert!((noise_std - 1.5).abs() < 1e-12);
                assert_eq!(*zeroed, 500);
            }
            _ => panic!("expected numerical"),
        }
        let (Column::Numerical(a), Column::Numerical(b)) = (&table.columns[0], &noisy.columns[0])
        else {
            unreachable!()
        };
        let unchanged = a.iter().zip(b).filter(|(x, y)| x == y).count();
        assert_eq!(unchanged, 500);
    }

    #[test]
    fn categorical_replacements_stay_in_level_set() {
        let table = mixed_table(1000);
        let cfg = NoiseConfig {
            feature_fraction: 1.0,
            seed: 11,
            ..NoiseConfig::default()
        };
        let (noisy, report) = inject_noise(&table, &cfg).unwrap();
        let Column::Categorical(v) = &noisy.columns[1] else {
            unreachable!()
        };
        assert!(v.iter().all(|s| ["a", "b", "c"].contains(&s.as_str())));
        assert_eq!(
            report.features[1].detail,
            CorruptionDetail::Categorical {
                replaced: 500,
                level_count: 3
            }
        );
    }

    #[test]
    fn feature_count_is_ceiling() {
        let names: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let cols = (0..10)
            .map(|_| Column::Numerical((0..20).map(f64::from).collect()))
            .collect();
        let table = Table::new(names, cols, vec![0.0; 20]).unwrap();
        let (_, report) = inject_noise(&table, &NoiseConfig::default()).unwrap();
        assert_eq!(report.features.len(), 3);
        let a = inject_noise(&table, &NoiseConfig::default()).unwrap();
        let b = inject_noise(&table, &NoiseConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_fraction_rejected() {
        let table = mixed_table(10);
        let cfg = NoiseConfig {
            feature_fraction: 0.0,
            ..NoiseConfig::default()
        };
        assert!(inject_noise(&table, &cfg).is_err());
        let empty = Table::new(vec![], vec![], vec![0.0; 4]).unwrap();
        assert!(matches!(
            inject_noise(&empty, &NoiseConfig::default()),
            Err(NsdtError::NoFeaturesSelected)
        ));
    }
}
