//! Tabular data pipeline: parse, clean, binarize, subsample, corrupt, split,
//! discretize and encode.

mod clean;
mod correlation;
mod discretize;
mod encode;
mod noise;
pub mod sources;
mod split;
mod synthetic;
mod table;

pub use clean::{binarize_insurance_target, load_and_clean, CleaningReport};
pub use correlation::{average_ranks, correlation_drop_check, cramers_v, spearman, AssociationDrop};
pub use discretize::{fit_discretizer, BinMapping, BinningMethod};
pub use encode::{encode_table, read_encoded, write_encoded, EncodedDataset};
pub use noise::{inject_noise, CorruptedFeature, CorruptionDetail, NoiseConfig, NoiseReport};
pub use split::{split_dataset, stratified_subsample, SplitTag, PREDEFINED_VALID_FRACTION};
pub use synthetic::{synthetic_table, SyntheticProfile};
pub use table::{Column, DatasetId, FeatureKind, FeatureSpec, Table};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const DEFAULT_BIN_COUNT: usize = 21;
pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    pub bin_count: usize,
    pub binning: BinningMethod,
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Stratified cap on the number of cleaned rows kept.
    pub subsample: Option<usize>,
    pub noise: Option<NoiseConfig>,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            bin_count: DEFAULT_BIN_COUNT,
            binning: BinningMethod::Quantile,
            ratios: DEFAULT_SPLIT,
            seed: 0,
            subsample: None,
            noise: None,
        }
    }
}

/// Everything produced by [`prepare`]: the encoded data plus the raw table it was
/// encoded from and the cleaning / noise reports.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: DatasetId,
    pub raw: Table,
    pub labels: Vec<u8>,
    pub encoded: EncodedDataset,
    pub cleaning: CleaningReport,
    pub noise: Option<NoiseReport>,
}

/// clean -> binarize (insurance) -> subsample -> noise -> split -> discretize.
///
/// Splits depend only on the row count and seed, so a noisy and a clean
/// preparation with the same config share identical split tags.
pub fn prepare(raw: &Table, dataset: DatasetId, config: &PrepareConfig) -> Result<Prepared> {
    let (clean, cleaning) = load_and_clean(raw, dataset.as_str())?;
    let labels = if dataset == DatasetId::Insurance {
        binarize_insurance_target(&clean.target)?
    } else {
        clean.labels()
    };
    let (clean, labels) = match config.subsample {
        Some(cap) if cap < clean.n_rows() => {
            let rows = stratified_subsample(&labels, cap, config.seed);
            let labels = rows.iter().map(|&r| labels[r]).collect();
            (clean.select_rows(&rows), labels)
        }
        _ => (clean, labels),
    };
    let (table, noise) = match &config.noise {
        Some(cfg) => {
            let (t, report) = inject_noise(&clean, cfg)?;
            (t, Some(report))
        }
        None => (clean, None),
    };
    let split = split_dataset(
        table.n_rows(),
        config.ratios,
        config.seed,
        table.test_mask.as_deref(),
    )?;
    let encoded = encode_table(&table, &labels, &split, config.bin_count, config.binning)?;
    Ok(Prepared {
        dataset,
        raw: table,
        labels,
        encoded,
        cleaning,
        noise,
    })
}
