//! Symbolic comparison models: k-nearest neighbours, a single tree and a forest.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{NsdtError, Result};
use crate::metrics::balanced_accuracy;
use crate::training::class_weights;
use crate::tree::{fit_symbolic_tree, SymbolicTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Knn,
    Dtree,
    Rforest,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Knn => "knn",
            BaselineKind::Dtree => "dtree",
            BaselineKind::Rforest => "rforest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub k: usize,
    pub tree_depth: usize,
    pub tree_min_leaf: usize,
    pub forest_trees: usize,
    pub forest_depth: usize,
    pub forest_min_leaf: usize,
    /// Cost-sensitive class weighting (votes for knn, impurity for trees).
    pub class_weighted: bool,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            k: 15,
            tree_depth: 6,
            tree_min_leaf: 50,
            forest_trees: 100,
            forest_depth: 12,
            forest_min_leaf: 10,
            class_weighted: true,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.forest_trees == 0 || self.tree_depth == 0 || self.forest_depth == 0 {
            return Err(NsdtError::InvalidConfig(
                "k, tree depths and tree count must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn tree_config(&self, weights: [f64; 2]) -> TreeConfig {
        TreeConfig {
            max_depth: self.tree_depth,
            min_leaf: self.tree_min_leaf,
            class_weights: weights,
            max_features: None,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    pub predictions: Vec<u8>,
    pub balanced_accuracy: f64,
}

fn weights_for(data: &EncodedDataset, rows: &[usize], on: bool) -> Result<[f64; 2]> {
    if !on {
        return Ok([1.0, 1.0]);
    }
    class_weights(&rows.iter().map(|&r| data.target[r]).collect::<Vec<_>>())
}

/// Min-max scaled numerical columns (fitted on `train`, clamped to [0, 1]).
pub fn knn_numeric(data: &EncodedDataset, train: &[usize]) -> Array2<f64> {
    let raw = &data.raw_numeric;
    let mut out = raw.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let (lo, hi) = train.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(raw[[r, j]]), hi.max(raw[[r, j]]))
        });
        let span = if hi > lo { hi - lo } else { 1.0 };
        col.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));
    }
    out
}

/// Squared Euclidean distance on scaled numerics plus one-hot categoricals
/// (a level mismatch contributes 2).
fn knn_distance(num: &Array2<f64>, codes: &Array2<u32>, cat: &[usize], a: usize, b: usize) -> f64 {
    let mut d = 0.0;
    for (x, y) in num.row(a).iter().zip(num.row(b).iter()) {
        d += (x - y) * (x - y);
    }
    for &f in cat {
        if codes[[a, f]] != codes[[b, f]] {
            d += 2.0;
        }
    }
    d
}

pub fn knn_predict(data: &EncodedDataset, train: &[usize], eval: &[usize], k: usize, weights: [f64; 2]) -> Result<Vec<u8>> {
    if k > train.len() {
        return Err(NsdtError::KTooLarge { k, n: train.len() });
    }
    let num = knn_numeric(data, train);
    let cat: Vec<usize> = (0..data.n_features())
        .filter(|&f| !data.features[f].is_numerical())
        .collect();
    Ok(eval
        .par_iter()
        .map(|&q| {
            let mut near: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for &t in train {
                let d = knn_distance(&num, &data.codes, &cat, q, t);
                if near.len() < k || d < near[near.len() - 1].0 {
                    let pos = near.partition_point(|&(nd, _)| nd <= d);
                    near.insert(pos, (d, t));
                    near.truncate(k);
                }
            }
            let mut votes = [0.0; 2];
            for &(_, t) in &near {
                votes[usize::from(data.target[t] != 0)] += weights[usize::from(data.target[t] != 0)];
            }
            u8::from(votes[1] > votes[0])
        })
        .collect())
}

pub fn fit_dtree(data: &EncodedDataset, train: &[usize], cfg: &BaselineConfig) -> Result<SymbolicTree> {
    let w = weights_for(data, train, cfg.class_weighted)?;
    fit_symbolic_tree(data.codes.view(), &data.target, &data.features, train, &cfg.tree_config(w))
}

pub struct Forest {
    pub trees: Vec<SymbolicTree>,
}

impl Forest {
    pub fn predict_proba(&self, row: &[u32]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Bootstrap forest with `sqrt(F)` features per split; trees fit in parallel
/// from per-tree seeds, so the result does not depend on scheduling.
pub fn fit_forest(data: &EncodedDataset, train: &[usize], cfg: &BaselineConfig) -> Result<Forest> {
    let w = weights_for(data, train, cfg.class_weighted)?;
    let max_features = ((data.n_features() as f64).sqrt().round() as usize).max(1);
    let trees = (0..cfg.forest_trees)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut boot: Vec<usize> = (0..train.len()).map(|_| train[rng.random_range(0..train.len())]).collect();
            boot.sort_unstable();
            let tc = TreeConfig {
                max_depth: cfg.forest_depth,
                min_leaf: cfg.forest_min_leaf,
                class_weights: w,
                max_features: Some(max_features),
                seed,
            };
            fit_symbolic_tree(data.codes.view(), &data.target, &data.features, &boot, &tc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest { trees })
}

fn row(data: &EncodedDataset, r: usize) -> Vec<u32> {
    data.codes.row(r).to_vec()
}

pub fn fit_predict_baseline(
    kind: BaselineKind,
    cfg: &BaselineConfig,
    data: &EncodedDataset,
    train: &[usize],
    eval: &[usize],
) -> Result<BaselineResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NsdtError::EmptySplit("train"));
    }
    let predictions = match kind {
        BaselineKind::Knn => {
            let w = weights_for(data, train, cfg.class_weighted)?;
            knn_predict(data, train, eval, cfg.k, w)?
        }
        BaselineKind::Dtree => {
            let tree = fit_dtree(data, train, cfg)?;
            eval.iter().map(|&r| tree.predict(&row(data, r))).collect()
        }
        BaselineKind::Rforest => {
            let forest = fit_forest(data, train, cfg)?;
            eval.iter()
                .map(|&r| u8::from(forest.predict_proba(&row(data, r)) > 0.5))
                .collect()
        }
    };
    let truth: Vec<u8> = eval.iter().map(|&r| data.target[r]).collect();
    Ok(BaselineResult {
        kind,
        balanced_accuracy: balanced_accuracy(&truth, &predictions),
        predictions,
    })
}
