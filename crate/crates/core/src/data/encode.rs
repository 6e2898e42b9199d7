use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use super::discretize::{fit_discretizer, BinMapping, BinningMethod};
use super::split::SplitTag;
use super::table::{Column, FeatureSpec, Table};
use crate::error::{NsdtError, Result};

/// Integer-coded dataset consumed by the trees and the fuzzy model.
///
/// `raw_numeric` keeps the untransformed values of the numerical features (in
/// feature order) for the distance-based baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub features: Vec<FeatureSpec>,
    pub mappings: Vec<Option<BinMapping>>,
    pub codes: Array2<u32>,
    pub raw_numeric: Array2<f64>,
    pub target: Vec<u8>,
    pub split: Vec<SplitTag>,
    /// Raw columns dropped because they were constant on the training split.
    pub degenerate: Vec<String>,
}

impl EncodedDataset {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn rows(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.split[i] == tag).collect()
    }

    pub fn numerical_features(&self) -> Vec<usize> {
        (0..self.n_features())
            .filter(|&f| self.features[f].is_numerical())
            .collect()
    }

    pub fn check_codes(&self) -> Result<()> {
        for (f, spec) in self.features.iter().enumerate() {
            let card = spec.cardinality();
            if let Some(&code) = self.codes.column(f).iter().find(|&&c| c as usize >= card) {
                return Err(NsdtError::CodeOutOfRange {
                    feature: f,
                    code,
                    cardinality: card,
                });
            }
        }
        Ok(())
    }

    /// Copy with a subset of rows (split tags carried along).
    pub fn select_rows(&self, rows: &[usize]) -> EncodedDataset {
        EncodedDataset {
            features: self.features.clone(),
            mappings: self.mappings.clone(),
            codes: self.codes.select(ndarray::Axis(0), rows),
            raw_numeric: self.raw_numeric.select(ndarray::Axis(0), rows),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            split: rows.iter().map(|&r| self.split[r]).collect(),
            degenerate: self.degenerate.clone(),
        }
    }
}

/// Fits numerical bins on the training rows and encodes every row. Categorical
/// levels are the sorted distinct values over the whole table.
pub fn encode_table(
    table: &Table,
    labels: &[u8],
    split: &[SplitTag],
    bin_count: usize,
    method: BinningMethod,
) -> Result<EncodedDataset> {
    let n = table.n_rows();
    if labels.len() != n || split.len() != n {
        return Err(NsdtError::Format("label/split length mismatch".into()));
    }
    let train: Vec<usize> = (0..n).filter(|&i| split[i] == SplitTag::Train).collect();
    if train.is_empty() {
        return Err(NsdtError::EmptySplit("train"));
    }

    let mut features = Vec::new();
    let mut mappings = Vec::new();
    let mut encoded_cols: Vec<Vec<u32>> = Vec::new();
    let mut raw_cols: Vec<&[f64]> = Vec::new();
    let mut degenerate = Vec::new();

    for (name, col) in table.names.iter().zip(&table.columns) {
        match col {
            Column::Numerical(values) => {
                let train_values: Vec<f64> = train.iter().map(|&i| values[i]).collect();
                match fit_discretizer(name, &train_values, bin_count, method) {
                    Ok(mapping) => {
                        encoded_cols.push(values.iter().map(|&v| mapping.bin(v)).collect());
                        features.push(mapping.feature.clone());
                        mappings.push(Some(mapping));
                        raw_cols.push(values);
                    }
                    Err(NsdtError::DegenerateFeature(_)) => degenerate.push(name.clone()),
                    Err(e) => return Err(e),
                }
            }
            Column::Categorical(values) => {
                let levels = col.distinct_levels();
                if levels.len() < 2 {
                    degenerate.push(name.clone());
                    continue;
                }
                let spec = FeatureSpec::categorical(name.clone(), levels)?;
                let lookup: std::collections::HashMap<&str, u32> = spec
                    .levels()
                    .unwrap_or_default()
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i as u32))
                    .collect();
                encoded_cols.push(values.iter().map(|v| lookup[v.as_str()]).collect());
                features.push(spec);
                mappings.push(None);
            }
        }
    }

    let mut codes = Array2::<u32>::zeros((n, features.len()));
    for (f, col) in encoded_cols.iter().enumerate() {
        for (i, &c) in col.iter().enumerate() {
            codes[[i, f]] = c;
        }
    }
    let mut raw_numeric = Array2::<f64>::zeros((n, raw_cols.len()));
    for (f, col) in raw_cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            raw_numeric[[i, f]] = v;
        }
    }
    Ok(EncodedDataset {
        features,
        mappings,
        codes,
        raw_numeric,
        target: labels.to_vec(),
        split: split.to_vec(),
        degenerate,
    })
}

const MAGIC: &str = "nsdt-encoded 1";

#[derive(Serialize, Deserialize)]
struct Header {
    features: Vec<FeatureSpec>,
    mappings: Vec<Option<BinMapping>>,
    degenerate: Vec<String>,
    rows: usize,
}

/// Writes the container: a magic line, a JSON schema line, a column header,
/// then one CSV record per row (`split,target,codes...,raw numerics...`).
pub fn write_encoded<W: Write>(data: &EncodedDataset, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    let header = Header {
        features: data.features.clone(),
        mappings: data.mappings.clone(),
        degenerate: data.degenerate.clone(),
        rows: data.n_rows(),
    };
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    let mut cols = vec!["split".to_string(), "target".to_string()];
    cols.extend((0..data.n_features()).map(|f| format!("c{f}")));
    cols.extend((0..data.raw_numeric.ncols()).map(|f| format!("x{f}")));
    writeln!(out, "{}", cols.join(","))?;
    let mut line = String::new();
    for i in 0..data.n_rows() {
        line.clear();
        line.push(data.split[i].as_char());
        line.push(',');
        line.push_str(&data.target[i].to_string());
        for &c in data.codes.row(i) {
            line.push(',');
            line.push_str(&c.to_string());
        }
        for &x in data.raw_numeric.row(i) {
            line.push(',');
            line.push_str(&format!("{x:?}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_encoded<R: BufRead>(input: R) -> Result<EncodedDataset> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| NsdtError::Format(format!("container truncated before {what}")))?
            .map_err(NsdtError::from)
    };
    if next("magic")? != MAGIC {
        return Err(NsdtError::Format("not an encoded dataset container".into()));
    }
    let header: Header = serde_json::from_str(&next("header")?)?;
    next("column names")?;
    let n_feat = header.features.len();
    let n_raw = header.mappings.iter().filter(|m| m.is_some()).count();
    let mut codes = Array2::<u32>::zeros((header.rows, n_feat));
    let mut raw = Array2::<f64>::zeros((header.rows, n_raw));
    let mut target = Vec::with_capacity(header.rows);
    let mut split = Vec::with_capacity(header.rows);
    for i in 0..header.rows {
        let line = next("row")?;
        let mut fields = line.split(',');
        let bad = || NsdtError::Format(format!("bad record at row {i}"));
        let tag = fields.next().and_then(|s| s.chars().next()).ok_or_else(bad)?;
        split.push(SplitTag::from_char(tag).ok_or_else(bad)?);
        target.push(fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?);
        for f in 0..n_feat {
            codes[[i, f]] = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        }
        for f in 0..n_raw {
            raw[[i, f]] = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        }
    }
    let data = EncodedDataset {
        features: header.features,
        mappings: header.mappings,
        codes,
        raw_numeric: raw,
        target,
        split,
        degenerate: header.degenerate,
    };
    data.check_codes()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> (Table, Vec<u8>, Vec<SplitTag>) {
        let n = 40;
        let table = Table::new(
            vec!["x".into(), "k".into(), "flat".into()],
            vec![
                Column::Numerical((0..n).map(|i| i as f64 * 0.5).collect()),
                Column::Categorical((0..n).map(|i| ["q", "p"][i % 2].to_string()).collect()),
                Column::Numerical(vec![1.0; n]),
            ],
            (0..n).map(|i| (i % 2) as f64).collect(),
        )
        .unwrap();
        let labels = table.labels();
        let split = (0..n)
            .map(|i| if i < 30 { SplitTag::Train } else { SplitTag::Test })
            .collect();
        (table, labels, split)
    }

    #[test]
    fn encodes_and_flags_degenerate() {
        let (table, labels, split) = small();
        let enc = encode_table(&table, &labels, &split, 4, BinningMethod::Quantile).unwrap();
        assert_eq!(enc.n_features(), 2);
        assert_eq!(enc.degenerate, vec!["flat".to_string()]);
        assert_eq!(enc.features[1].levels().unwrap(), &["p", "q"]);
        assert_eq!(enc.codes[[0, 1]], 1);
        enc.check_codes().unwrap();
        // test rows beyond the training range land in the last bin
        assert_eq!(enc.codes[[39, 0]], 3);
    }

    #[test]
    fn container_round_trip() {
        let (table, labels, split) = small();
        let enc = encode_table(&table, &labels, &split, 4, BinningMethod::Quantile).unwrap();
        let mut buf = Vec::new();
        write_encoded(&enc, &mut buf).unwrap();
        let back = read_encoded(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, enc);
    }

    proptest! {
        #[test]
        fn level_encoding_round_trips(levels in prop::collection::btree_set("[a-z]{1,6}", 1..12)) {
            let levels: Vec<String> = levels.into_iter().collect();
            let spec = FeatureSpec::categorical("c", levels.clone()).unwrap();
            for l in &levels {
                let code = spec.encode_level(l).unwrap();
                prop_assert_eq!(spec.decode_level(code), Some(l.as_str()));
            }
        }
    }
}
