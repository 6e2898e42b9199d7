//! Feature-target association used to confirm that noise injection weakened
//! the corrupted features.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::table::{Column, Table};
use crate::error::{NsdtError, Result};

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Bias-corrected Cramér's V between a categorical column and a binary target.
pub fn cramers_v(levels: &[String], target: &[u8]) -> Option<f64> {
    let n = levels.len();
    if n != target.len() || n < 2 {
        return None;
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut table: Vec<[f64; 2]> = Vec::new();
    let mut col = [0.0f64; 2];
    for (l, &y) in levels.iter().zip(target) {
        let next = index.len();
        let r = *index.entry(l.as_str()).or_insert(next);
        if r == table.len() {
            table.push([0.0; 2]);
        }
        table[r][usize::from(y != 0)] += 1.0;
        col[usize::from(y != 0)] += 1.0;
    }
    let r = table.len();
    let k = col.iter().filter(|&&c| c > 0.0).count();
    if r < 2 || k < 2 {
        return None;
    }
    let nf = n as f64;
    let mut chi2 = 0.0;
    for row in &table {
        let row_sum = row[0] + row[1];
        for j in 0..2 {
            let expected = row_sum * col[j] / nf;
            chi2 += (row[j] - expected).powi(2) / expected;
        }
    }
    let phi2 = chi2 / nf;
    let (rf, kf) = (r as f64, 2.0);
    let phi2_corr = (phi2 - (kf - 1.0) * (rf - 1.0) / (nf - 1.0)).max(0.0);
    let r_corr = rf - (rf - 1.0).powi(2) / (nf - 1.0);
    let k_corr = kf - (kf - 1.0).powi(2) / (nf - 1.0);
    let denom = (k_corr - 1.0).min(r_corr - 1.0);
    if denom <= 0.0 {
        return None;
    }
    Some((phi2_corr / denom).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationDrop {
    pub index: usize,
    pub name: String,
    pub measure: String,
    pub before: Option<f64>,
    pub after: Option<f64>,
    /// `(|before| - |after|) / |before|`; `None` when undefined.
    pub relative_drop: Option<f64>,
    pub excluded: bool,
}

impl AssociationDrop {
    pub fn decreased(&self) -> bool {
        match (self.before, self.after) {
            (Some(b), Some(a)) => a.abs() < b.abs(),
            _ => false,
        }
    }
}

fn association(column: &Column, target: &[u8]) -> (String, Option<f64>) {
    match column {
        Column::Numerical(v) => {
            let y: Vec<f64> = target.iter().map(|&t| f64::from(t)).collect();
            ("spearman".into(), spearman(v, &y))
        }
        Column::Categorical(v) => ("cramers_v".into(), cramers_v(v, target)),
    }
}

/// Before/after association for each of `features`.
pub fn correlation_drop_check(
    clean: &Table,
    corrupted: &Table,
    target: &[u8],
    features: &[usize],
) -> Result<Vec<AssociationDrop>> {
    if clean.names != corrupted.names || clean.n_rows() != corrupted.n_rows() {
        return Err(NsdtError::Format(
            "clean and corrupted tables do not share a schema".into(),
        ));
    }
    Ok(features
        .iter()
        .map(|&f| {
            let (measure, before) = association(&clean.columns[f], target);
            let (_, after) = association(&corrupted.columns[f], target);
            let excluded = before.is_none() || after.is_none();
            let relative_drop = match (before, after) {
                (Some(b), Some(a)) if b != 0.0 => Some((b.abs() - a.abs()) / b.abs()),
                _ => None,
            };
            AssociationDrop {
                index: f,
                name: clean.names[f].clone(),
                measure,
                before,
                after,
                relative_drop,
                excluded,
            }
        })
        .collect())
}
