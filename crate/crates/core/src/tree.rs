//! Symbolic pre-training: a greedy Gini tree over integer codes, and the
//! root-to-leaf rules the fuzzy model inherits from it.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use crate::data::FeatureSpec;
use crate::error::{NsdtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Per-class sample weights used in the impurity and leaf votes.
    pub class_weights: [f64; 2],
    /// Features considered per split (`None` = all); drawn with `seed`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf: 50,
            class_weights: [1.0, 1.0],
            max_features: None,
            seed: 0,
        }
    }
}

/// Split test stored at an internal node; the left child takes the satisfied side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum SplitTest {
    /// `code <= bin` (numerical features).
    Le { bin: u32 },
    /// `code in levels` (categorical features).
    In { levels: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        test: SplitTest,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_id: usize,
        /// Weighted class mass that reached the leaf during fitting.
        counts: [f64; 2],
    },
}

/// Arena-allocated binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicTree {
    pub nodes: Vec<TreeNode>,
    pub n_leaves: usize,
}

fn gini(c: [f64; 2]) -> f64 {
    let t = c[0] + c[1];
    if t <= 0.0 {
        return 0.0;
    }
    let p = c[1] / t;
    2.0 * p * (1.0 - p)
}

struct Candidate {
    gain: f64,
    feature: usize,
    test: SplitTest,
}

struct Fitter<'a> {
    codes: ArrayView2<'a, u32>,
    target: &'a [u8],
    features: &'a [FeatureSpec],
    config: &'a TreeConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    n_leaves: usize,
}

impl Fitter<'_> {
    fn mass(&self, rows: &[usize]) -> [f64; 2] {
        let mut c = [0.0; 2];
        for &r in rows {
            let y = usize::from(self.target[r]);
            c[y] += self.config.class_weights[y];
        }
        c
    }

    fn leaf(&mut self, rows: &[usize]) -> usize {
        let id = self.nodes.len();
        let counts = self.mass(rows);
        self.nodes.push(TreeNode::Leaf {
            leaf_id: self.n_leaves,
            counts,
        });
        self.n_leaves += 1;
        id
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<Candidate> {
        let parent = self.mass(rows);
        let total = parent[0] + parent[1];
        let parent_impurity = gini(parent);
        if parent_impurity <= 0.0 {
            return None;
        }
        let n_feat = self.features.len();
        let candidates: Vec<usize> = match self.config.max_features {
            Some(k) if k < n_feat => {
                let mut v = sample(&mut self.rng, n_feat, k.max(1)).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n_feat).collect(),
        };
        let min_leaf = self.config.min_leaf.max(1);
        let w = self.config.class_weights;
        let mut best: Option<Candidate> = None;
        for f in candidates {
            let card = self.features[f].cardinality();
            let mut mass = vec![[0.0f64; 2]; card];
            let mut count = vec![0usize; card];
            for &r in rows {
                let c = self.codes[[r, f]] as usize;
                let y = usize::from(self.target[r]);
                mass[c][y] += w[y];
                count[c] += 1;
            }
            let mut consider = |test: SplitTest, left: [f64; 2], n_left: usize| {
                let n_right = rows.len() - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    return;
                }
                let right = [parent[0] - left[0], parent[1] - left[1]];
                let lt = left[0] + left[1];
                let rt = right[0] + right[1];
                let child = (lt * gini(left) + rt * gini(right)) / total;
                let gain = parent_impurity - child;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain + 1e-15) {
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        test,
                    });
                }
            };
            if self.features[f].is_numerical() {
                let mut left = [0.0; 2];
                let mut n_left = 0;
                for t in 0..card.saturating_sub(1) {
                    left[0] += mass[t][0];
                    left[1] += mass[t][1];
                    n_left += count[t];
                    if count[t] == 0 {
                        continue;
                    }
                    consider(SplitTest::Le { bin: t as u32 }, left, n_left);
                }
            } else {
                for level in 0..card {
                    if count[level] == 0 {
                        continue;
                    }
                    consider(
                        SplitTest::In {
                            levels: vec![level as u32],
                        },
                        mass[level],
                        count[level],
                    );
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        if depth >= self.config.max_depth || rows.len() < 2 * self.config.min_leaf.max(1) {
            return self.leaf(&rows);
        }
        let Some(split) = self.best_split(&rows) else {
            return self.leaf(&rows);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| split.test.satisfied(self.codes[[r, split.feature]]));
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            leaf_id: usize::MAX,
            counts: [0.0; 2],
        });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            test: split.test,
            left,
            right,
        };
        id
    }
}

impl SplitTest {
    pub fn satisfied(&self, code: u32) -> bool {
        match self {
            SplitTest::Le { bin } => code <= *bin,
            SplitTest::In { levels } => levels.contains(&code),
        }
    }
}

/// Fits a greedy Gini tree on `rows`. Numerical features split as `bin <= t`,
/// categorical features as one-level membership tests.
pub fn fit_symbolic_tree(
    codes: ArrayView2<'_, u32>,
    target: &[u8],
    features: &[FeatureSpec],
    rows: &[usize],
    config: &TreeConfig,
) -> Result<SymbolicTree> {
    if rows.is_empty() {
        return Err(NsdtError::EmptySplit("train"));
    }
    if config.max_depth < 1 {
        return Err(NsdtError::InvalidDepth);
    }
    let mut fitter = Fitter {
        codes,
        target,
        features,
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        nodes: Vec::new(),
        n_leaves: 0,
    };
    fitter.grow(rows.to_vec(), 0);
    Ok(SymbolicTree {
        nodes: fitter.nodes,
        n_leaves: fitter.n_leaves,
    })
}

impl SymbolicTree {
    /// Node index of the leaf reached by `row`.
    pub fn leaf_node(&self, row: &[u32]) -> usize {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { .. } => return node,
                TreeNode::Split {
                    feature,
                    test,
                    left,
                    right,
                } => node = if test.satisfied(row[*feature]) { *left } else { *right },
            }
        }
    }

    pub fn leaf_id(&self, row: &[u32]) -> usize {
        match self.nodes[self.leaf_node(row)] {
            TreeNode::Leaf { leaf_id, .. } => leaf_id,
            TreeNode::Split { .. } => unreachable!("leaf_node returns a leaf"),
        }
    }

    /// Positive-class share of the weighted mass at the reached leaf.
    pub fn predict_proba(&self, row: &[u32]) -> f64 {
        match self.nodes[self.leaf_node(row)] {
            TreeNode::Leaf { counts, .. } => {
                let t = counts[0] + counts[1];
                if t > 0.0 {
                    counts[1] / t
                } else {
                    0.5
                }
            }
            TreeNode::Split { .. } => unreachable!("leaf_node returns a leaf"),
        }
    }

    pub fn predict(&self, row: &[u32]) -> u8 {
        u8::from(self.predict_proba(row) > 0.5)
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelOp {
    Le,
    Gt,
    In,
    NotIn,
}

impl RelOp {
    pub fn glyph(self) -> &'static str {
        match self {
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::In => "in",
            RelOp::NotIn => "not in",
        }
    }

    pub fn is_numerical(self) -> bool {
        matches!(self, RelOp::Le | RelOp::Gt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Bin(u32),
    Levels(Vec<u32>),
}

/// One condition of a rule. `node` is the index of the tree node it came from,
/// which lets the shared-threshold model tie conditions across rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub op: RelOp,
    pub threshold: Threshold,
    pub node: usize,
}

impl Condition {
    pub fn holds(&self, row: &[u32]) -> bool {
        let code = row[self.feature];
        match (&self.op, &self.threshold) {
            (RelOp::Le, Threshold::Bin(t)) => code <= *t,
            (RelOp::Gt, Threshold::Bin(t)) => code > *t,
            (RelOp::In, Threshold::Levels(s)) => s.contains(&code),
            (RelOp::NotIn, Threshold::Levels(s)) => !s.contains(&code),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub conditions: Vec<Condition>,
    pub leaf_id: usize,
}

impl DecisionRule {
    pub fn holds(&self, row: &[u32]) -> bool {
        self.conditions.iter().all(|c| c.holds(row))
    }
}

/// One rule per leaf, in left-to-right leaf order. Left edges append the node's
/// test, right edges its complement.
pub fn extract_rules(tree: &SymbolicTree) -> Vec<DecisionRule> {
    fn walk(tree: &SymbolicTree, id: usize, path: &mut Vec<Condition>, out: &mut Vec<DecisionRule>) {
        match &tree.nodes[id] {
            TreeNode::Leaf { leaf_id, .. } => out.push(DecisionRule {
                conditions: path.clone(),
                leaf_id: *leaf_id,
            }),
            TreeNode::Split {
                feature,
                test,
                left,
                right,
            } => {
                let (sat, unsat, threshold) = match test {
                    SplitTest::Le { bin } => (RelOp::Le, RelOp::Gt, Threshold::Bin(*bin)),
                    SplitTest::In { levels } => {
                        (RelOp::In, RelOp::NotIn, Threshold::Levels(levels.clone()))
                    }
                };
                for (op, child) in [(sat, *left), (unsat, *right)] {
                    path.push(Condition {
                        feature: *feature,
                        op,
                        threshold: threshold.clone(),
                        node: id,
                    });
                    walk(tree, child, path, out);
                    path.pop();
                }
            }
        }
    }
    let mut out = Vec::with_capacity(tree.n_leaves);
    walk(tree, 0, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DedupePolicy {
    #[default]
    KeepDeepest,
    KeepShallowest,
}

/// Leaves one condition per `(feature, operator)`.
///
/// `Le`/`Gt` duplicates keep the deepest (or shallowest) occurrence. Set-valued
/// duplicates are merged instead (union for `NotIn`, intersection for `In`) so
/// the rule keeps its meaning; the merged condition sits at the kept position.
pub fn dedupe_rule(rule: &DecisionRule, policy: DedupePolicy) -> DecisionRule {
    let n = rule.conditions.len();
    let key = |c: &Condition| (c.feature, c.op);
    let mut keep = vec![false; n];
    for i in 0..n {
        let k = key(&rule.conditions[i]);
        let chosen = match policy {
            DedupePolicy::KeepDeepest => (0..n).rev().find(|&j| key(&rule.conditions[j]) == k),
            DedupePolicy::KeepShallowest => (0..n).find(|&j| key(&rule.conditions[j]) == k),
        };
        keep[i] = chosen == Some(i);
    }
    let conditions = (0..n)
        .filter(|&i| keep[i])
        .map(|i| {
            let c = &rule.conditions[i];
            if c.op.is_numerical() {
                return c.clone();
            }
            let sets = rule
                .conditions
                .iter()
                .filter(|o| key(o) == key(c))
                .filter_map(|o| match &o.threshold {
                    Threshold::Levels(s) => Some(s.iter().copied().collect::<BTreeSet<u32>>()),
                    Threshold::Bin(_) => None,
                });
            let merged: BTreeSet<u32> = if c.op == RelOp::NotIn {
                sets.flatten().collect()
            } else {
                sets.reduce(|a, b| a.intersection(&b).copied().collect())
                    .unwrap_or_default()
            };
            Condition {
                threshold: Threshold::Levels(merged.into_iter().collect()),
                ..c.clone()
            }
        })
        .collect();
    DecisionRule {
        conditions,
        leaf_id: rule.leaf_id,
    }
}

/// Rules padded to a common slot count; `None` slots are padding and evaluate to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddedRuleSet {
    pub depth: usize,
    pub rules: Vec<PaddedRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddedRule {
    pub leaf_id: usize,
    pub slots: Vec<Option<Condition>>,
}

impl PaddedRule {
    pub fn pad_mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_none).collect()
    }

    pub fn conditions(&self) -> impl Iterator<Item = &Condition> {
        self.slots.iter().flatten()
    }

    pub fn holds(&self, row: &[u32]) -> bool {
        self.conditions().all(|c| c.holds(row))
    }
}

impl PaddedRuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// One JSON record per rule: leaf id, slots, pad mask.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            leaf_id: usize,
            depth: usize,
            slots: &'a [Option<Condition>],
            pad_mask: Vec<bool>,
        }
        for rule in &self.rules {
            serde_json::to_writer(
                &mut out,
                &Record {
                    leaf_id: rule.leaf_id,
                    depth: self.depth,
                    slots: &rule.slots,
                    pad_mask: rule.pad_mask(),
                },
            )?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_records<R: BufRead>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Record {
            leaf_id: usize,
            depth: usize,
            slots: Vec<Option<Condition>>,
        }
        let mut depth = 0;
        let mut rules = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)?;
            if rec.slots.len() != rec.depth {
                return Err(NsdtError::Format("rule slot count differs from depth".into()));
            }
            depth = rec.depth;
            rules.push(PaddedRule {
                leaf_id: rec.leaf_id,
                slots: rec.slots,
            });
        }
        Ok(Self { depth, rules })
    }
}

pub fn pad_rules(rules: &[DecisionRule], depth: usize) -> Result<PaddedRuleSet> {
    let longest = rules.iter().map(|r| r.conditions.len()).max().unwrap_or(0);
    if depth < longest {
        return Err(NsdtError::PadTooShort {
            pad: depth,
            longest,
        });
    }
    let rules = rules
        .iter()
        .map(|r| {
            let mut slots: Vec<Option<Condition>> =
                r.conditions.iter().cloned().map(Some).collect();
            slots.resize(depth, None);
            PaddedRule {
                leaf_id: r.leaf_id,
                slots,
            }
        })
        .collect();
    Ok(PaddedRuleSet { depth, rules })
}

/// Fit → extract → dedupe → pad, with the slot count equal to `max_depth`.
pub fn symbolic_rule_set(
    tree: &SymbolicTree,
    max_depth: usize,
    policy: DedupePolicy,
) -> Result<PaddedRuleSet> {
    let rules: Vec<DecisionRule> = extract_rules(tree)
        .iter()
        .map(|r| dedupe_rule(r, policy))
        .collect();
    pad_rules(&rules, max_depth.max(1))
}
