use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{NsdtError, Result};

/// The four benchmark datasets the loaders understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Higgs,
    Census,
    Credit,
    Insurance,
}

impl DatasetId {
    pub const ALL: [DatasetId; 4] = [
        DatasetId::Higgs,
        DatasetId::Census,
        DatasetId::Credit,
        DatasetId::Insurance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Higgs => "higgs",
            DatasetId::Census => "census",
            DatasetId::Credit => "credit",
            DatasetId::Insurance => "insurance",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = NsdtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "higgs" => Ok(DatasetId::Higgs),
            "census" => Ok(DatasetId::Census),
            "credit" => Ok(DatasetId::Credit),
            "insurance" => Ok(DatasetId::Insurance),
            other => Err(NsdtError::UnknownDataset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Numerical { bin_count: usize },
    Categorical { levels: Vec<String> },
}

/// Schema of one encoded feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numerical(name: impl Into<String>, bin_count: usize) -> Result<Self> {
        let name = name.into();
        if bin_count < 2 {
            return Err(NsdtError::DegenerateFeature(name));
        }
        Ok(Self {
            name,
            kind: FeatureKind::Numerical { bin_count },
        })
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if levels.is_empty() {
            return Err(NsdtError::DegenerateFeature(name));
        }
        let mut seen = std::collections::HashSet::new();
        for level in &levels {
            if !seen.insert(level.as_str()) {
                return Err(NsdtError::InvalidConfig(format!(
                    "feature `{name}` has duplicate level `{level}`"
                )));
            }
        }
        Ok(Self {
            name,
            kind: FeatureKind::Categorical { levels },
        })
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.kind, FeatureKind::Numerical { .. })
    }

    /// Number of distinct codes: `h_i` for numerical features, level count otherwise.
    pub fn cardinality(&self) -> usize {
        match &self.kind {
            FeatureKind::Numerical { bin_count } => *bin_count,
            FeatureKind::Categorical { levels } => levels.len(),
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { levels } => Some(levels),
            FeatureKind::Numerical { .. } => None,
        }
    }

    pub fn encode_level(&self, level: &str) -> Option<u32> {
        self.levels()?
            .iter()
            .position(|l| l == level)
            .map(|p| p as u32)
    }

    pub fn decode_level(&self, code: u32) -> Option<&str> {
        self.levels()?.get(code as usize).map(String::as_str)
    }
}

/// A raw column. Missing numerical cells are `NaN`; missing categorical cells are empty strings.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numerical(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numerical(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numerical(v) => !v[row].is_finite(),
            Column::Categorical(v) => v[row].is_empty(),
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Column::Numerical(_))
    }

    pub(crate) fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numerical(v) => Column::Numerical(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(v) => {
                Column::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }

    /// Sorted distinct non-missing levels of a categorical column.
    pub fn distinct_levels(&self) -> Vec<String> {
        match self {
            Column::Numerical(_) => Vec::new(),
            Column::Categorical(v) => {
                let set: std::collections::BTreeSet<&str> = v
                    .iter()
                    .filter(|s| !s.is_empty())
                    .map(String::as_str)
                    .collect();
                set.into_iter().map(str::to_string).collect()
            }
        }
    }
}

/// A raw (pre-discretization) table with a real-valued target.
///
/// `test_mask` is set when the source ships a predefined train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Column>,
    pub target: Vec<f64>,
    pub test_mask: Option<Vec<bool>>,
}

impl Table {
    pub fn new(names: Vec<String>, columns: Vec<Column>, target: Vec<f64>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(NsdtError::Format(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(bad) = columns.iter().position(|c| c.len() != target.len()) {
            return Err(NsdtError::Format(format!(
                "column `{}` has {} rows, target has {}",
                names[bad],
                columns[bad].len(),
                target.len()
            )));
        }
        Ok(Self {
            names,
            columns,
            target,
            test_mask: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            test_mask: self
                .test_mask
                .as_ref()
                .map(|m| rows.iter().map(|&r| m[r]).collect()),
        }
    }

    /// Binary labels; any non-zero target counts as the positive class.
    pub fn labels(&self) -> Vec<u8> {
        self.target.iter().map(|&t| u8::from(t != 0.0)).collect()
    }
}
