use serde::{Deserialize, Serialize};

use super::table::FeatureSpec;
use crate::error::{NsdtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningMethod {
    /// Equal-frequency cut points taken from the training column's order statistics.
    #[default]
    Quantile,
    EqualWidth,
}

/// Half-open interval binning: bin `k` covers `[edges[k-1], edges[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapping {
    pub feature: FeatureSpec,
    pub edges: Vec<f64>,
    /// Smallest training value, used as the left edge of bin 0 when rendering.
    pub lower: f64,
}

impl BinMapping {
    pub fn from_edges(name: impl Into<String>, edges: Vec<f64>, lower: f64) -> Result<Self> {
        let name = name.into();
        if edges.windows(2).any(|w| w[0] >= w[1]) || edges.iter().any(|e| !e.is_finite()) {
            return Err(NsdtError::InvalidConfig(format!(
                "edges of `{name}` must be finite and strictly increasing"
            )));
        }
        let feature = FeatureSpec::numerical(name, edges.len() + 1)?;
        Ok(Self {
            feature,
            edges,
            lower,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len() + 1
    }

    /// Index of the bin holding `x`: the number of edges `<= x`.
    pub fn bin(&self, x: f64) -> u32 {
        self.edges.partition_point(|&e| e <= x) as u32
    }

    /// Left edge of `bin`, in raw units.
    pub fn left_edge(&self, bin: u32) -> f64 {
        match bin {
            0 => self.lower,
            b => self.edges[(b as usize - 1).min(self.edges.len() - 1)],
        }
    }

    /// Right (exclusive) edge of `bin`; `None` for the last bin.
    pub fn right_edge(&self, bin: u32) -> Option<f64> {
        self.edges.get(bin as usize).copied()
    }
}

/// Fits cut points on a training column. Duplicate quantiles are merged, so the
/// effective bin count can be smaller than requested.
pub fn fit_discretizer(
    name: &str,
    train_column: &[f64],
    bin_count: usize,
    method: BinningMethod,
) -> Result<BinMapping> {
    if bin_count < 2 {
        return Err(NsdtError::InvalidConfig(format!(
            "bin_count for `{name}` must be at least 2"
        )));
    }
    let mut sorted: Vec<f64> = train_column.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) else {
        return Err(NsdtError::DegenerateFeature(name.to_string()));
    };
    if lo == hi {
        return Err(NsdtError::DegenerateFeature(name.to_string()));
    }
    let n = sorted.len();
    let mut edges: Vec<f64> = match method {
        BinningMethod::Quantile => (1..bin_count).map(|k| sorted[k * n / bin_count]).collect(),
        BinningMethod::EqualWidth => (1..bin_count)
            .map(|k| lo + (hi - lo) * k as f64 / bin_count as f64)
            .collect(),
    };
    edges.retain(|&e| e > lo);
    edges.dedup();
    if edges.is_empty() {
        // every quantile collapsed onto the minimum; cut at the next distinct value
        let next = sorted.iter().copied().find(|&v| v > lo).unwrap_or(hi);
        edges.push(next);
    }
    BinMapping::from_edges(name, edges, lo)
}
