use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

use super::table::{Column, DatasetId, Table};
use crate::error::{NsdtError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub dataset: String,
    pub rows_before: usize,
    pub dropped_missing: usize,
    pub dropped_duplicates: usize,
    pub dropped_conflicting: usize,
    pub rows_after: usize,
}

fn row_key(table: &Table, row: usize) -> String {
    let mut key = String::new();
    for col in &table.columns {
        match col {
            Column::Numerical(v) => key.push_str(&format!("{:016x}", v[row].to_bits())),
            Column::Categorical(v) => {
                key.push_str(&v[row].replace('\\', "\\\\").replace('\u{1f}', "\\u"));
            }
        }
        key.push('\u{1f}');
    }
    key
}

/// Drops rows with missing cells, exact duplicate rows (first occurrence kept) and,
/// for census, every row whose feature tuple appears with more than one label.
pub fn load_and_clean(raw: &Table, dataset: &str) -> Result<(Table, CleaningReport)> {
    let id: DatasetId = dataset.parse()?;
    let n = raw.n_rows();

    let complete: Vec<usize> = (0..n)
        .filter(|&r| raw.target[r].is_finite() && raw.columns.iter().all(|c| !c.is_missing(r)))
        .collect();
    let dropped_missing = n - complete.len();

    let mut seen = HashSet::new();
    let mut unique = Vec::with_capacity(complete.len());
    for &r in &complete {
        let mut key = row_key(raw, r);
        key.push_str(&format!("{:016x}", raw.target[r].to_bits()));
        if seen.insert(key) {
            unique.push(r);
        }
    }
    let dropped_duplicates = complete.len() - unique.len();

    let kept = if id == DatasetId::Census {
        let mut labels: HashMap<String, HashSet<u64>> = HashMap::new();
        for &r in &unique {
            labels
                .entry(row_key(raw, r))
                .or_default()
                .insert(raw.target[r].to_bits());
        }
        unique
            .iter()
            .copied()
            .filter(|&r| labels[&row_key(raw, r)].len() == 1)
            .collect()
    } else {
        unique.clone()
    };
    let dropped_conflicting = unique.len() - kept.len();

    if kept.is_empty() {
        return Err(NsdtError::EmptyTable(id.to_string()));
    }
    let report = CleaningReport {
        dataset: id.to_string(),
        rows_before: n,
        dropped_missing,
        dropped_duplicates,
        dropped_conflicting,
        rows_after: kept.len(),
    };
    Ok((raw.select_rows(&kept), report))
}

/// Maps the top decile of a continuous target to 1.
///
/// The cut value is the element at zero-based index `ceil(0.9 n)` of the ascending
/// sort (nearest rank, strictly past the 90% mark); every value at or above it is
/// positive, so ties at the cut all become 1.
pub fn binarize_insurance_target(targets: &[f64]) -> Result<Vec<u8>> {
    let n = targets.len();
    if n < 10 {
        return Err(NsdtError::TooFewSamples { needed: 10, got: n });
    }
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[(9 * n).div_ceil(10)];
    Ok(targets.iter().map(|&t| u8::from(t >= cut)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(f64, &str, f64)]) -> Table {
        Table::new(
            vec!["x".into(), "c".into()],
            vec![
                Column::Numerical(rows.iter().map(|r| r.0).collect()),
                Column::Categorical(rows.iter().map(|r| r.1.to_string()).collect()),
            ],
            rows.iter().map(|r| r.2).collect(),
        )
        .unwrap()
    }

    #[test]
    fn drops_missing_cells() {
        let t = table(&[(1.0, "a", 0.0), (f64::NAN, "b", 1.0), (3.0, "c", 1.0)]);
        let (clean, report) = load_and_clean(&t, "higgs").unwrap();
        assert_eq!(clean.n_rows(), 2);
        assert_eq!(report.dropped_missing, 1);
        let t = table(&[(1.0, "", 0.0), (2.0, "b", 1.0), (3.0, "c", 1.0)]);
        assert_eq!(load_and_clean(&t, "credit").unwrap().0.n_rows(), 2);
    }

    #[test]
    fn drops_exact_duplicates_keeping_first() {
        let t = table(&[(1.0, "a", 0.0), (1.0, "a", 0.0), (2.0, "a", 1.0)]);
        let (clean, report) = load_and_clean(&t, "insurance").unwrap();
        assert_eq!(clean.n_rows(), 2);
        assert_eq!(report.dropped_duplicates, 1);
    }

    #[test]
    fn census_conflicts_are_dropped_entirely() {
        let t = table(&[(1.0, "a", 0.0), (1.0, "a", 1.0), (2.0, "b", 1.0)]);
        let (clean, report) = load_and_clean(&t, "census").unwrap();
        assert_eq!(clean.n_rows(), 1);
        assert_eq!(report.dropped_conflicting, 2);
        // other datasets keep conflicting rows
        let (clean, _) = load_and_clean(&t, "higgs").unwrap();
        assert_eq!(clean.n_rows(), 3);
    }

    #[test]
    fn unknown_dataset_and_empty_result() {
        let t = table(&[(1.0, "a", 0.0)]);
        assert!(matches!(
            load_and_clean(&t, "mnist"),
            Err(NsdtError::UnknownDataset(_))
        ));
        let t = table(&[(f64::NAN, "a", 0.0)]);
        assert!(matches!(
            load_and_clean(&t, "higgs"),
            Err(NsdtError::EmptyTable(_))
        ));
    }

    #[test]
    fn insurance_top_decile_of_ranks() {
        let targets: Vec<f64> = (1..=100).map(f64::from).collect();
        let y = binarize_insurance_target(&targets).unwrap();
        assert_eq!(y.iter().filter(|&&v| v == 1).count(), 10);
        assert!(y[90..].iter().all(|&v| v == 1));
        assert!(y[..90].iter().all(|&v| v == 0));
    }

    #[test]
    fn insurance_all_equal_is_all_positive() {
        let y = binarize_insurance_target(&[3.5; 25]).unwrap();
        assert!(y.iter().all(|&v| v == 1));
    }

    #[test]
    fn insurance_matches_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let targets: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let mut sorted = targets.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = (0.9f64 * 1000.0).ceil() as usize;
        let expected = targets.iter().filter(|&&t| t >= sorted[idx]).count();
        let y = binarize_insurance_target(&targets).unwrap();
        let got = y.iter().filter(|&&v| v == 1).count();
        assert_eq!(got, expected);
        let frac = got as f64 / 1000.0;
        assert!((0.09..=0.11).contains(&frac));
    }

    #[test]
    fn insurance_needs_ten_samples() {
        assert!(matches!(
            binarize_insurance_target(&[1.0; 9]),
            Err(NsdtError::TooFewSamples { .. })
        ));
    }
}
