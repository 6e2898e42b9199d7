use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::operator::{OpCache, OpKind, OperatorModule};
use super::params::{ParamStore, TensorId};
use crate::data::FeatureSpec;
use crate::error::{NsdtError, Result};
use crate::tree::{Condition, PaddedRuleSet, RelOp, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Thresholds shared by every rule passing through a tree node; `>` is `1 - le`.
    Nsdt,
    /// One threshold per (rule, slot); `>` has its own module.
    Gnsdt,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nsdt => "nsdt",
            Variant::Gnsdt => "gnsdt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden: Vec<usize>,
    /// Std of the Gaussian jitter added to threshold embeddings at initialization.
    pub threshold_noise: f64,
    /// Std of the initial bin/level embeddings.
    pub embedding_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            hidden: vec![64, 64],
            threshold_noise: 0.01,
            embedding_scale: 0.5,
            seed: 0,
        }
    }
}

/// A trainable threshold embedding and the node semantics it stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdNode {
    pub feature: usize,
    pub kind: OpKind,
    /// Symbolic threshold the embedding was initialized from.
    pub symbolic: Threshold,
}

/// A non-padding slot: which threshold it reads and whether it takes the complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    pub threshold: usize,
    pub negate: bool,
}

/// Something an operator module can take as an argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbRef {
    Code { feature: usize, code: usize },
    Threshold(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyModel {
    pub variant: Variant,
    pub config: ModelConfig,
    pub features: Vec<FeatureSpec>,
    pub rules: PaddedRuleSet,
    pub slots: Vec<Vec<Option<SlotRef>>>,
    pub thresholds: Vec<ThresholdNode>,
    pub params: ParamStore,
    pub(crate) embeddings: Vec<TensorId>,
    pub(crate) threshold_tensor: TensorId,
    pub(crate) operators: [Option<OperatorModule>; 3],
    pub(crate) head_weight: TensorId,
    pub(crate) head_bias: TensorId,
}

/// Per-threshold operator responses over every code of the threshold's feature.
///
/// Node outputs for any sample are lookups into these tables, so one module
/// evaluation per (threshold, code) serves a whole batch.
#[derive(Debug, Clone)]
pub struct ResponseTables {
    pub values: Vec<Vec<f64>>,
    caches: [Option<OpCache>; 3],
    pairs: [Vec<(EmbRef, EmbRef)>; 3],
    /// `(module, offset)` of each threshold's first entry.
    location: Vec<(usize, usize)>,
}

impl ResponseTables {
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| vec![0.0; v.len()]).collect()
    }
}

fn module_for(variant: Variant, op: RelOp) -> (OpKind, bool) {
    match (variant, op) {
        (_, RelOp::Le) => (OpKind::Le, false),
        (Variant::Nsdt, RelOp::Gt) => (OpKind::Le, true),
        (Variant::Gnsdt, RelOp::Gt) => (OpKind::Ge, false),
        (_, RelOp::In) => (OpKind::Be, false),
        (_, RelOp::NotIn) => (OpKind::Be, true),
    }
}

impl FuzzyModel {
    pub fn build_nsdt(
        rules: &PaddedRuleSet,
        features: &[FeatureSpec],
        config: &ModelConfig,
    ) -> Result<Self> {
        Self::build(rules, features, config, Variant::Nsdt)
    }

    pub fn build_gnsdt(
        rules: &PaddedRuleSet,
        features: &[FeatureSpec],
        config: &ModelConfig,
    ) -> Result<Self> {
        Self::build(rules, features, config, Variant::Gnsdt)
    }

    pub fn build(
        rules: &PaddedRuleSet,
        features: &[FeatureSpec],
        config: &ModelConfig,
        variant: Variant,
    ) -> Result<Self> {
        if rules.is_empty() {
            return Err(NsdtError::EmptyRuleSet);
        }
        if config.dim == 0 {
            return Err(NsdtError::InvalidConfig("embedding dim must be positive".into()));
        }
        for c in rules.rules.iter().flat_map(|r| r.conditions()) {
            let spec = features.get(c.feature).ok_or_else(|| {
                NsdtError::ContractViolation(format!("rule references feature {}", c.feature))
            })?;
            if c.op.is_numerical() != spec.is_numerical() {
                return Err(NsdtError::ContractViolation(format!(
                    "operator {:?} on feature `{}`",
                    c.op, spec.name
                )));
            }
        }

        // Threshold allocation: shared per tree node (NSDT) or per slot (G-NSDT).
        let mut thresholds: Vec<ThresholdNode> = Vec::new();
        let mut shared: HashMap<(usize, bool, String), usize> = HashMap::new();
        let mut slots = Vec::with_capacity(rules.len());
        for rule in &rules.rules {
            let mut row = Vec::with_capacity(rules.depth);
            for slot in &rule.slots {
                let Some(c) = slot else {
                    row.push(None);
                    continue;
                };
                let (kind, negate) = module_for(variant, c.op);
                let node = ThresholdNode {
                    feature: c.feature,
                    kind,
                    symbolic: c.threshold.clone(),
                };
                let threshold = match variant {
                    Variant::Nsdt => {
                        let key = (c.node, c.op.is_numerical(), format!("{:?}", c.threshold));
                        *shared.entry(key).or_insert_with(|| {
                            thresholds.push(node);
                            thresholds.len() - 1
                        })
                    }
                    Variant::Gnsdt => {
                        thresholds.push(node);
                        thresholds.len() - 1
                    }
                };
                row.push(Some(SlotRef { threshold, negate }));
            }
            slots.push(row);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let emb_normal = Normal::new(0.0, config.embedding_scale.max(1e-12))
            .map_err(|e| NsdtError::InvalidConfig(e.to_string()))?;
        let embeddings = features
            .iter()
            .enumerate()
            .map(|(f, spec)| {
                let t = Array2::from_shape_fn((spec.cardinality(), config.dim), |_| {
                    emb_normal.sample(&mut rng)
                });
                params.add(format!("embed.feature{f}"), t)
            })
            .collect();
        let threshold_tensor = params.add("thresholds", Array2::zeros((thresholds.len(), config.dim)));

        let used: Vec<OpKind> = OpKind::ALL
            .into_iter()
            .filter(|k| thresholds.iter().any(|t| t.kind == *k))
            .collect();
        let mut operators: [Option<OperatorModule>; 3] = [None, None, None];
        for kind in OpKind::ALL {
            // le is always present: numerical regularizers and decoding rely on it,
            // and ge exists exactly in the generalized variant when numerical nodes do
            let wanted = used.contains(&kind)
                || kind == OpKind::Le
                || (kind == OpKind::Ge && variant == Variant::Gnsdt && used.contains(&OpKind::Le));
            if wanted {
                operators[kind.index()] = Some(OperatorModule::init(
                    kind,
                    config.dim,
                    &config.hidden,
                    &mut params,
                    &mut rng,
                ));
            }
        }

        let head_normal = Normal::new(0.0, 0.01).expect("positive std");
        let head_weight = params.add(
            "head.weight",
            Array2::from_shape_fn((rules.len(), 2), |_| head_normal.sample(&mut rng)),
        );
        let head_bias = params.add("head.bias", Array2::zeros((1, 2)));

        let mut model = Self {
            variant,
            config: config.clone(),
            features: features.to_vec(),
            rules: rules.clone(),
            slots,
            thresholds,
            params,
            embeddings,
            threshold_tensor,
            operators,
            head_weight,
            head_bias,
        };
        model.reseed_thresholds(config.seed ^ 0x7468_7265_7368);
        Ok(model)
    }

    /// Re-initializes every threshold from the embedding of its symbolic split
    /// (bin embedding, or mean level embedding for a level set) plus jitter.
    pub fn reseed_thresholds(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.config.threshold_noise.max(0.0))
            .unwrap_or_else(|_| Normal::new(0.0, 0.0).expect("zero std is valid"));
        let dim = self.config.dim;
        for k in 0..self.thresholds.len() {
            let node = &self.thresholds[k];
            let emb = self.params.get(self.embeddings[node.feature]);
            let mut base = vec![0.0; dim];
            match &node.symbolic {
                Threshold::Bin(b) => {
                    let b = (*b as usize).min(emb.nrows() - 1);
                    base.copy_from_slice(emb.row(b).as_slice().expect("row-major"));
                }
                Threshold::Levels(levels) if !levels.is_empty() => {
                    for &l in levels {
                        for (d, v) in base.iter_mut().enumerate() {
                            *v += emb[[l as usize, d]] / levels.len() as f64;
                        }
                    }
                }
                Threshold::Levels(_) => {}
            }
            let t = self.params.get_mut(self.threshold_tensor);
            for d in 0..dim {
                t[[k, d]] = base[d] + noise.sample(&mut rng);
            }
        }
    }

    pub fn n_rules(&self) -> usize {
        self.rules.len()
    }

    pub fn n_thresholds(&self) -> usize {
        self.thresholds.len()
    }

    pub fn operator(&self, kind: OpKind) -> Option<&OperatorModule> {
        self.operators[kind.index()].as_ref()
    }

    pub fn embedding_tensor(&self, feature: usize) -> TensorId {
        self.embeddings[feature]
    }

    pub fn threshold_tensor(&self) -> TensorId {
        self.threshold_tensor
    }

    pub fn head(&self) -> (TensorId, TensorId) {
        (self.head_weight, self.head_bias)
    }

    pub fn embedding(&self, r: EmbRef) -> ndarray::ArrayView1<'_, f64> {
        match r {
            EmbRef::Code { feature, code } => self.params.get(self.embeddings[feature]).row(code),
            EmbRef::Threshold(k) => self.params.get(self.threshold_tensor).row(k),
        }
    }

    fn locate(&self, r: EmbRef) -> (TensorId, usize) {
        match r {
            EmbRef::Code { feature, code } => (self.embeddings[feature], code),
            EmbRef::Threshold(k) => (self.threshold_tensor, k),
        }
    }

    /// Feature whose value space `r` lives in.
    pub fn feature_of(&self, r: EmbRef) -> usize {
        match r {
            EmbRef::Code { feature, .. } => feature,
            EmbRef::Threshold(k) => self.thresholds[k].feature,
        }
    }

    /// Thresholds evaluated by `kind` on `feature`.
    pub fn thresholds_on(&self, feature: usize, kind: OpKind) -> Vec<usize> {
        (0..self.thresholds.len())
            .filter(|&k| self.thresholds[k].feature == feature && self.thresholds[k].kind == kind)
            .collect()
    }

    /// Features with at least one node of a numerical kind (the set the
    /// le/ge regularizers sum over).
    pub fn rule_numerical_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .thresholds
            .iter()
            .filter(|t| t.kind != OpKind::Be)
            .map(|t| t.feature)
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    fn gather(&self, pairs: &[(EmbRef, EmbRef)]) -> Array2<f64> {
        let dim = self.config.dim;
        let mut x = Array2::zeros((pairs.len(), 2 * dim));
        for (i, (a, b)) in pairs.iter().enumerate() {
            x.slice_mut(ndarray::s![i, ..dim]).assign(&self.embedding(*a));
            x.slice_mut(ndarray::s![i, dim..]).assign(&self.embedding(*b));
        }
        x
    }

    fn module(&self, kind: OpKind) -> Result<&OperatorModule> {
        self.operator(kind).ok_or_else(|| {
            NsdtError::ContractViolation(format!("model has no `{}` module", kind.as_str()))
        })
    }

    /// Batched module evaluation on embedding pairs.
    pub fn eval_pairs<R: Rng>(
        &self,
        kind: OpKind,
        pairs: &[(EmbRef, EmbRef)],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<OpCache> {
        let module = self.module(kind)?;
        Ok(module.forward(&self.params, self.gather(pairs), dropout))
    }

    /// Backpropagates `d_out` through a cached [`Self::eval_pairs`] call into `grads`.
    pub fn backward_pairs(
        &self,
        kind: OpKind,
        pairs: &[(EmbRef, EmbRef)],
        cache: &OpCache,
        d_out: &[f64],
        grads: &mut ParamStore,
    ) -> Result<()> {
        let module = self.module(kind)?;
        let dx = module.backward(&self.params, cache, d_out, grads);
        let dim = self.config.dim;
        for (i, (a, b)) in pairs.iter().enumerate() {
            for (half, r) in [(0, a), (dim, b)] {
                let (tensor, row) = self.locate(*r);
                let g = grads.get_mut(tensor);
                for d in 0..dim {
                    g[[row, d]] += dx[[i, half + d]];
                }
            }
        }
        Ok(())
    }

    pub fn compute_tables<R: Rng>(&self, mut dropout: Option<(f64, &mut R)>) -> Result<ResponseTables> {
        let mut pairs: [Vec<(EmbRef, EmbRef)>; 3] = Default::default();
        let mut location = Vec::with_capacity(self.thresholds.len());
        for (k, node) in self.thresholds.iter().enumerate() {
            let m = node.kind.index();
            location.push((m, pairs[m].len()));
            for code in 0..self.features[node.feature].cardinality() {
                pairs[m].push((
                    EmbRef::Code {
                        feature: node.feature,
                        code,
                    },
                    EmbRef::Threshold(k),
                ));
            }
        }
        let mut caches: [Option<OpCache>; 3] = [None, None, None];
        for kind in OpKind::ALL {
            let m = kind.index();
            if pairs[m].is_empty() {
                continue;
            }
            let drop = dropout.as_mut().map(|(p, r)| (*p, &mut **r));
            caches[m] = Some(self.eval_pairs(kind, &pairs[m], drop)?);
        }
        let values = self
            .thresholds
            .iter()
            .zip(&location)
            .map(|(node, &(m, off))| {
                let out = &caches[m].as_ref().expect("module evaluated").output;
                let card = self.features[node.feature].cardinality();
                out.slice(ndarray::s![off..off + card]).to_vec()
            })
            .collect();
        Ok(ResponseTables {
            values,
            caches,
            pairs,
            location,
        })
    }

    pub fn backward_tables(
        &self,
        tables: &ResponseTables,
        d_values: &[Vec<f64>],
        grads: &mut ParamStore,
    ) -> Result<()> {
        for kind in OpKind::ALL {
            let m = kind.index();
            let Some(cache) = &tables.caches[m] else { continue };
            let mut d_out = vec![0.0; tables.pairs[m].len()];
            for (k, &(mk, off)) in tables.location.iter().enumerate() {
                if mk == m {
                    d_out[off..off + d_values[k].len()].copy_from_slice(&d_values[k]);
                }
            }
            self.backward_pairs(kind, &tables.pairs[m], cache, &d_out, grads)?;
        }
        Ok(())
    }

    fn slot_value(tables: &ResponseTables, slot: SlotRef, code: u32) -> f64 {
        let v = tables.values[slot.threshold][code as usize];
        if slot.negate {
            1.0 - v
        } else {
            v
        }
    }

    /// Rule outputs (`rows x L`) via table lookups.
    pub fn rule_matrix(
        &self,
        tables: &ResponseTables,
        codes: ArrayView2<'_, u32>,
        rows: &[usize],
    ) -> Array2<f64> {
        let mut r = Array2::ones((rows.len(), self.n_rules()));
        for (i, &row) in rows.iter().enumerate() {
            for (l, rule) in self.slots.iter().enumerate() {
                let mut prod = 1.0;
                for (s, slot) in rule.iter().enumerate() {
                    if let Some(slot) = slot {
                        let c = self.rules.rules[l].slots[s]
                            .as_ref()
                            .map(|c| c.feature)
                            .expect("slot has a condition");
                        prod *= Self::slot_value(tables, *slot, codes[[row, c]]);
                    }
                }
                r[[i, l]] = prod;
            }
        }
        r
    }

    /// Accumulates `d_r` (gradient w.r.t. rule outputs) into per-table-entry gradients.
    pub fn backward_rules(
        &self,
        tables: &ResponseTables,
        codes: ArrayView2<'_, u32>,
        rows: &[usize],
        d_r: &Array2<f64>,
        d_values: &mut [Vec<f64>],
    ) {
        let depth = self.rules.depth;
        let mut vals = vec![1.0; depth];
        let mut prefix = vec![1.0; depth + 1];
        let mut suffix = vec![1.0; depth + 1];
        for (i, &row) in rows.iter().enumerate() {
            for (l, rule) in self.slots.iter().enumerate() {
                let g = d_r[[i, l]];
                if g == 0.0 {
                    continue;
                }
                for (s, slot) in rule.iter().enumerate() {
                    vals[s] = match slot {
                        Some(slot) => {
                            let f = self.rules.rules[l].slots[s].as_ref().expect("condition").feature;
                            Self::slot_value(tables, *slot, codes[[row, f]])
                        }
                        None => 1.0,
                    };
                }
                for s in 0..depth {
                    prefix[s + 1] = prefix[s] * vals[s];
                }
                for s in (0..depth).rev() {
                    suffix[s] = suffix[s + 1] * vals[s];
                }
                for (s, slot) in rule.iter().enumerate() {
                    let Some(slot) = slot else { continue };
                    let f = self.rules.rules[l].slots[s].as_ref().expect("condition").feature;
                    let code = codes[[row, f]] as usize;
                    let d = g * prefix[s] * suffix[s + 1];
                    d_values[slot.threshold][code] += if slot.negate { -d } else { d };
                }
            }
        }
    }

    /// Class logits `r W + b` for a batch of rule vectors.
    pub fn head_logits(&self, r: &Array2<f64>) -> Array2<f64> {
        let mut logits = r.dot(self.params.get(self.head_weight));
        logits += self.params.get(self.head_bias);
        logits
    }

    pub fn logits_for(&self, codes: ArrayView2<'_, u32>, rows: &[usize]) -> Result<Array2<f64>> {
        let tables = self.compute_tables::<ChaCha8Rng>(None)?;
        let r = self.rule_matrix(&tables, codes, rows);
        Ok(self.head_logits(&r))
    }

    /// Batched prediction: `(logits, predicted classes)`.
    pub fn predict(&self, codes: ArrayView2<'_, u32>, rows: &[usize]) -> Result<(Array2<f64>, Vec<u8>)> {
        let logits = self.logits_for(codes, rows)?;
        let classes = logits
            .axis_iter(Axis(0))
            .map(|l| u8::from(l[1] > l[0]))
            .collect();
        Ok((logits, classes))
    }

    /// Positive-class probability per row (softmax over the two logits).
    pub fn predict_proba(&self, codes: ArrayView2<'_, u32>, rows: &[usize]) -> Result<Vec<f64>> {
        let logits = self.logits_for(codes, rows)?;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|l| 1.0 / (1.0 + (l[0] - l[1]).exp()))
            .collect())
    }

    fn check_row(&self, row: &[u32]) -> Result<()> {
        for (f, spec) in self.features.iter().enumerate() {
            let code = *row.get(f).ok_or_else(|| {
                NsdtError::ContractViolation(format!("sample has {} codes", row.len()))
            })?;
            if code as usize >= spec.cardinality() {
                return Err(NsdtError::CodeOutOfRange {
                    feature: f,
                    code,
                    cardinality: spec.cardinality(),
                });
            }
        }
        Ok(())
    }

    /// Degree of satisfaction of one (non-padding) slot, evaluated directly.
    pub fn node_output(&self, rule: usize, slot: usize, row: &[u32]) -> Result<f64> {
        self.check_row(row)?;
        let cell = self
            .slots
            .get(rule)
            .and_then(|r| r.get(slot))
            .ok_or_else(|| NsdtError::ContractViolation(format!("no slot ({rule}, {slot})")))?;
        let Some(s) = cell else {
            return Err(NsdtError::ContractViolation(format!(
                "slot ({rule}, {slot}) is padding"
            )));
        };
        let node = &self.thresholds[s.threshold];
        let code = row[node.feature] as usize;
        let a = self.embedding(EmbRef::Code {
            feature: node.feature,
            code,
        });
        let b = self.embedding(EmbRef::Threshold(s.threshold));
        let v = self.module(node.kind)?.eval_pair(
            &self.params,
            a.as_slice().expect("row-major"),
            b.as_slice().expect("row-major"),
        );
        Ok(if s.negate { 1.0 - v } else { v })
    }

    /// Product of the rule's node outputs; padding contributes 1.
    pub fn rule_output(&self, rule: usize, row: &[u32]) -> Result<f64> {
        let mut prod = 1.0;
        for s in 0..self.rules.depth {
            if self.slots[rule][s].is_some() {
                prod *= self.node_output(rule, s, row)?;
            }
        }
        Ok(prod)
    }

    /// Per-sample logits evaluated node by node (no tables).
    pub fn predict_one(&self, row: &[u32]) -> Result<[f64; 2]> {
        let w = self.params.get(self.head_weight);
        let b = self.params.get(self.head_bias);
        let mut logits = [b[[0, 0]], b[[0, 1]]];
        for l in 0..self.n_rules() {
            let r = self.rule_output(l, row)?;
            logits[0] += r * w[[l, 0]];
            logits[1] += r * w[[l, 1]];
        }
        Ok(logits)
    }

    /// Sets the generalized `ge` module to the exact mirror of `le`
    /// (`ge(a, b) = 1 - le(a, b)`) by negating the output layer.
    pub fn mirror_ge_from_le(&mut self) -> Result<()> {
        let le = self.module(OpKind::Le)?.clone();
        let ge = self.module(OpKind::Ge)?.clone();
        let last = le.layers.len() - 1;
        for (l, (&(lw, lb), &(gw, gb))) in le.layers.iter().zip(&ge.layers).enumerate() {
            let sign = if l == last { -1.0 } else { 1.0 };
            let w = self.params.get(lw).mapv(|v| sign * v);
            let b = self.params.get(lb).mapv(|v| sign * v);
            *self.params.get_mut(gw) = w;
            *self.params.get_mut(gb) = b;
        }
        Ok(())
    }

    /// A generalized model whose per-slot thresholds, embeddings, `le`/`be`
    /// modules and head are copied from a shared-threshold model, with `ge`
    /// mirroring `le`. Both give the same predictions.
    pub fn gnsdt_from_nsdt(nsdt: &FuzzyModel) -> Result<FuzzyModel> {
        if nsdt.variant != Variant::Nsdt {
            return Err(NsdtError::ContractViolation("source must be an NSDT model".into()));
        }
        let mut g = Self::build_gnsdt(&nsdt.rules, &nsdt.features, &nsdt.config)?;
        for (dst, src) in g.embeddings.clone().into_iter().zip(&nsdt.embeddings) {
            *g.params.get_mut(dst) = nsdt.params.get(*src).clone();
        }
        for kind in [OpKind::Le, OpKind::Be] {
            if let (Some(dst), Some(src)) = (g.operator(kind).cloned(), nsdt.operator(kind)) {
                for (&(dw, db), &(sw, sb)) in dst.layers.iter().zip(&src.layers) {
                    *g.params.get_mut(dw) = nsdt.params.get(sw).clone();
                    *g.params.get_mut(db) = nsdt.params.get(sb).clone();
                }
            }
        }
        if g.operator(OpKind::Ge).is_some() {
            g.mirror_ge_from_le()?;
        }
        let src_t = nsdt.params.get(nsdt.threshold_tensor).clone();
        for (l, row) in g.slots.clone().iter().enumerate() {
            for (s, slot) in row.iter().enumerate() {
                if let (Some(gs), Some(ns)) = (slot, nsdt.slots[l][s]) {
                    let v = src_t.row(ns.threshold).to_owned();
                    g.params.get_mut(g.threshold_tensor).row_mut(gs.threshold).assign(&v);
                }
            }
        }
        *g.params.get_mut(g.head_weight) = nsdt.params.get(nsdt.head_weight).clone();
        *g.params.get_mut(g.head_bias) = nsdt.params.get(nsdt.head_bias).clone();
        Ok(g)
    }

    /// Sets the head so each rule votes with the smoothed log-odds of its
    /// symbolic leaf (`leaf_mass[leaf_id]` = weighted class mass).
    pub fn init_head_from_leaves(&mut self, leaf_mass: &[[f64; 2]], scale: f64) {
        let w = self.params.get_mut(self.head_weight);
        for (l, rule) in self.rules.rules.iter().enumerate() {
            if let Some(m) = leaf_mass.get(rule.leaf_id) {
                let log_odds = ((m[1] + 1.0) / (m[0] + 1.0)).ln();
                w[[l, 0]] = -0.5 * scale * log_odds;
                w[[l, 1]] = 0.5 * scale * log_odds;
            }
        }
    }

    pub fn condition(&self, rule: usize, slot: usize) -> Option<&Condition> {
        self.rules.rules.get(rule)?.slots.get(slot)?.as_ref()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tree::{pad_rules, DecisionRule, PaddedRule};

    pub(crate) fn cond(feature: usize, op: RelOp, t: u32, node: usize) -> Condition {
        Condition {
            feature,
            op,
            threshold: Threshold::Bin(t),
            node,
        }
    }

    /// Four-leaf tree over features 1, 10, 15 plus a categorical feature 3.
    pub(crate) fn figure_rules() -> (PaddedRuleSet, Vec<FeatureSpec>) {
        let mut features: Vec<FeatureSpec> = (0..16)
            .map(|i| FeatureSpec::numerical(format!("F{i}"), 21).unwrap())
            .collect();
        features[3] = FeatureSpec::categorical("cat", vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let rules = vec![
            DecisionRule {
                conditions: vec![cond(1, RelOp::Le, 10, 0), cond(10, RelOp::Le, 5, 1), cond(15, RelOp::Le, 7, 2)],
                leaf_id: 0,
            },
            DecisionRule {
                conditions: vec![cond(1, RelOp::Le, 10, 0), cond(10, RelOp::Le, 5, 1), cond(15, RelOp::Gt, 7, 2)],
                leaf_id: 1,
            },
            DecisionRule {
                conditions: vec![
                    cond(1, RelOp::Le, 10, 0),
                    cond(10, RelOp::Gt, 5, 1),
                    Condition { feature: 3, op: RelOp::In, threshold: Threshold::Levels(vec![1]), node: 5 },
                ],
                leaf_id: 2,
            },
            DecisionRule {
                conditions: vec![cond(1, RelOp::Gt, 10, 0)],
                leaf_id: 3,
            },
        ];
        (pad_rules(&rules, 4).unwrap(), features)
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            dim: 4,
            hidden: vec![8, 8],
            ..ModelConfig::default()
        }
    }

    fn random_rows(model: &FuzzyModel, n: usize, seed: u64) -> Array2<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, model.features.len()), |(_, f)| {
            rng.random_range(0..model.features[f].cardinality() as u32)
        })
    }

    #[test]
    fn threshold_counts_shared_vs_per_slot() {
        let (rules, features) = figure_rules();
        // the first two rules alone: t1, t2, t4 shared
        let two = PaddedRuleSet { depth: 4, rules: rules.rules[..2].to_vec() };
        let nsdt = FuzzyModel::build_nsdt(&two, &features, &small_config()).unwrap();
        assert_eq!(nsdt.n_thresholds(), 3);
        let gnsdt = FuzzyModel::build_gnsdt(&two, &features, &small_config()).unwrap();
        assert_eq!(gnsdt.n_thresholds(), 6);
        assert!(gnsdt.operator(OpKind::Ge).is_some());
        assert!(nsdt.operator(OpKind::Ge).is_none());

        let nsdt = FuzzyModel::build_nsdt(&rules, &features, &small_config()).unwrap();
        // t1, t2, t4 and the categorical node
        assert_eq!(nsdt.n_thresholds(), 4);
        assert_eq!(nsdt.slots[1][0], nsdt.slots[0][0]);
        assert_eq!(nsdt.slots[1][2].unwrap().threshold, nsdt.slots[0][2].unwrap().threshold);
        assert!(nsdt.slots[1][2].unwrap().negate);
    }

    #[test]
    fn single_leaf_model_is_bias_only() {
        let features = vec![FeatureSpec::numerical("x", 5).unwrap()];
        let rules = PaddedRuleSet {
            depth: 2,
            rules: vec![PaddedRule { leaf_id: 0, slots: vec![None, None] }],
        };
        let mut m = FuzzyModel::build_nsdt(&rules, &features, &small_config()).unwrap();
        assert_eq!(m.n_rules(), 1);
        assert_eq!(m.n_thresholds(), 0);
        assert_eq!(m.rule_output(0, &[3]).unwrap(), 1.0);
        let (w, b) = m.head();
        m.params.get_mut(w).fill(0.0);
        m.params.get_mut(b)[[0, 1]] = 0.7;
        let logits = m.predict_one(&[2]).unwrap();
        assert_eq!(logits, [0.0, 0.7]);
    }

    #[test]
    fn empty_rule_set_rejected() {
        let features = vec![FeatureSpec::numerical("x", 5).unwrap()];
        let rules = PaddedRuleSet { depth: 2, rules: vec![] };
        assert!(matches!(
            FuzzyModel::build_nsdt(&rules, &features, &small_config()),
            Err(NsdtError::EmptyRuleSet)
        ));
    }

    #[test]
    fn complement_identity_and_padding_errors() {
        let (rules, features) = figure_rules();
        let m = FuzzyModel::build_nsdt(&rules, &features, &small_config()).unwrap();
        let rows = random_rows(&m, 50, 1);
        for i in 0..50 {
            let row = rows.row(i).to_vec();
            let le = m.node_output(0, 2, &row).unwrap();
            let gt = m.node_output(1, 2, &row).unwrap();
            assert!((le + gt - 1.0).abs() < 1e-15);
            assert_eq!(gt, 1.0 - le);
            assert!(le > 0.0 && le < 1.0);
        }
        assert!(m.node_output(3, 1, &rows.row(0).to_vec()).is_err());
        let mut bad = rows.row(0).to_vec();
        bad[1] = 21;
        assert!(matches!(
            m.node_output(0, 0, &bad),
            Err(NsdtError::CodeOutOfRange { .. })
        ));
    }

    #[test]
    fn table_path_matches_direct_path() {
        let (rules, features) = figure_rules();
        for variant in [Variant::Nsdt, Variant::Gnsdt] {
            let m = FuzzyModel::build(&rules, &features, &small_config(), variant).unwrap();
            let rows = random_rows(&m, 200, 3);
            let idx: Vec<usize> = (0..200).collect();
            let (logits, classes) = m.predict(rows.view(), &idx).unwrap();
            for i in 0..200 {
                let one = m.predict_one(rows.row(i).as_slice().unwrap()).unwrap();
                assert!((one[0] - logits[[i, 0]]).abs() < 1e-12);
                assert!((one[1] - logits[[i, 1]]).abs() < 1e-12);
                assert_eq!(classes[i], u8::from(one[1] > one[0]));
            }
        }
    }

    #[test]
    fn mirrored_gnsdt_matches_nsdt() {
        let (rules, features) = figure_rules();
        let nsdt = FuzzyModel::build_nsdt(&rules, &features, &small_config()).unwrap();
        let g = FuzzyModel::gnsdt_from_nsdt(&nsdt).unwrap();
        let rows = random_rows(&nsdt, 300, 4);
        let idx: Vec<usize> = (0..300).collect();
        let (a, _) = nsdt.predict(rows.view(), &idx).unwrap();
        let (b, _) = g.predict(rows.view(), &idx).unwrap();
        let diff = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let (rules, features) = figure_rules();
        let mut m = FuzzyModel::build_nsdt(&rules, &features, &small_config()).unwrap();
        let (w, b) = m.head();
        m.params.get_mut(w).fill(0.0);
        m.params.get_mut(b).fill(0.0);
        let rows = random_rows(&m, 20, 5);
        let p = m.predict_proba(rows.view(), &(0..20).collect::<Vec<_>>()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }
}
