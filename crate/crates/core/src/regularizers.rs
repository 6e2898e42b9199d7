//! Relational regularizers shaping `le`, `ge` and `be` into fuzzy operators.
//!
//! Each loss is the mean of its terms over sampled tuples (or over all
//! table entries for the table-based losses). Gates use `step(0) = 1` and
//! carry no gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::decode::decode_index;
use crate::error::{NsdtError, Result};
use crate::fuzzy::{EmbRef, FuzzyModel, OpKind, ParamStore, ResponseTables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledLosses {
    pub reflexivity: bool,
    pub antisymmetry: bool,
    pub transitivity: bool,
    pub ranking: bool,
    pub monotonicity: bool,
    pub consistency: bool,
    pub inclusiveness: bool,
}

impl EnabledLosses {
    pub const ALL: Self = Self {
        reflexivity: true,
        antisymmetry: true,
        transitivity: true,
        ranking: true,
        monotonicity: true,
        consistency: true,
        inclusiveness: true,
    };

    pub const NONE: Self = Self {
        reflexivity: false,
        antisymmetry: false,
        transitivity: false,
        ranking: false,
        monotonicity: false,
        consistency: false,
        inclusiveness: false,
    };

    pub fn any(&self) -> bool {
        self.reflexivity
            || self.antisymmetry
            || self.transitivity
            || self.ranking
            || self.monotonicity
            || self.consistency
            || self.inclusiveness
    }
}

impl Default for EnabledLosses {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerConfig {
    pub alpha: f64,
    pub samples_per_loss: usize,
    pub membership_cut: f64,
    pub enabled: EnabledLosses,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            samples_per_loss: 256,
            membership_cut: 0.9,
            enabled: EnabledLosses::ALL,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(NsdtError::InvalidConfig(format!("alpha = {}", self.alpha)));
        }
        if self.samples_per_loss == 0 {
            return Err(NsdtError::InvalidConfig("samples_per_loss must be >= 1".into()));
        }
        if !(self.membership_cut > 0.5 && self.membership_cut < 1.0) {
            return Err(NsdtError::InvalidConfig(format!(
                "membership_cut = {}",
                self.membership_cut
            )));
        }
        Ok(())
    }

    /// True when training must evaluate regularizers at all.
    pub fn active(&self) -> bool {
        self.alpha > 0.0 && self.enabled.any()
    }
}

pub fn step(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn abs_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `|le(a, a) - 0.5|`.
pub fn reflexivity_term(aa: f64) -> f64 {
    (aa - 0.5).abs()
}

/// `|op(a, b) - (1 - op(b, a))|`.
pub fn antisymmetry_term(ab: f64, ba: f64) -> f64 {
    (ab - (1.0 - ba)).abs()
}

/// Gates of the two transitivity directions for a chain `(ab, bc)`.
pub fn transitivity_gates(ab: f64, bc: f64) -> (bool, bool) {
    (
        step(ab - 0.5) * step(bc - 0.5) > 0.0,
        step(0.5 - ab) * step(0.5 - bc) > 0.0,
    )
}

/// Both directional transitivity terms for the given gates.
pub fn transitivity_term_gated(ab: f64, bc: f64, ac: f64, gates: (bool, bool)) -> f64 {
    let mut t = 0.0;
    if gates.0 {
        t += relu(ab.max(bc) - ac);
    }
    if gates.1 {
        t += relu(ac - ab.min(bc));
    }
    t
}

pub fn transitivity_term(ab: f64, bc: f64, ac: f64) -> f64 {
    transitivity_term_gated(ab, bc, ac, transitivity_gates(ab, bc))
}

/// Target of `le(bin a, bin b)` on a feature with `h` bins.
pub fn ranking_target(a: usize, b: usize, h: usize) -> f64 {
    let step = 0.5 / (h as f64 - 1.0);
    let diff = a.abs_diff(b) as f64;
    if a <= b {
        0.5 + diff * step
    } else {
        0.5 - diff * step
    }
}

/// Target of `ge(bin a, bin b)`: the mirror of [`ranking_target`].
pub fn ranking_target_ge(a: usize, b: usize, h: usize) -> f64 {
    1.0 - ranking_target(a, b, h)
}

/// Ends of a monotonicity window for a module that decreases (`le`) or
/// increases (`ge`) along the bin axis: `(maximum end, minimum end)`.
fn mono_ends(u: usize, l: usize, decreasing: bool) -> (usize, usize) {
    if decreasing {
        (u, l)
    } else {
        (l, u)
    }
}

/// Monotonicity terms over the window `[u, l]` of a response curve: no bin
/// may exceed the maximum end, none may fall below the minimum end.
pub fn monotonicity_term(curve: &[f64], u: usize, l: usize, decreasing: bool) -> f64 {
    let (hi, lo) = mono_ends(u, l, decreasing);
    let mut t = 0.0;
    for c in u..=l {
        if c != hi {
            t += relu(curve[c] - curve[hi]);
        }
        if c != lo {
            t += relu(curve[lo] - curve[c]);
        }
    }
    t
}

fn monotonicity_grad(curve: &[f64], u: usize, l: usize, decreasing: bool, scale: f64, d: &mut [f64]) {
    let (hi, lo) = mono_ends(u, l, decreasing);
    for c in u..=l {
        if c != hi {
            let g = scale * relu_grad(curve[c] - curve[hi]);
            d[c] += g;
            d[hi] -= g;
        }
        if c != lo {
            let g = scale * relu_grad(curve[lo] - curve[c]);
            d[lo] += g;
            d[c] -= g;
        }
    }
}

/// Consistency terms around the decoded bin `d`: bins on the "true" side
/// must respond above `curve[d]`, bins on the other side below it.
pub fn consistency_term(curve: &[f64], d: usize, decreasing: bool) -> f64 {
    let mut t = 0.0;
    for (j, &v) in curve.iter().enumerate() {
        let below = j < d;
        if j == d {
            continue;
        }
        // le: j < d must be higher; ge: j < d must be lower
        t += if below == decreasing {
            relu(curve[d] - v)
        } else {
            relu(v - curve[d])
        };
    }
    t
}

fn consistency_grad(curve: &[f64], d: usize, decreasing: bool, scale: f64, out: &mut [f64]) {
    for (j, &v) in curve.iter().enumerate() {
        if j == d {
            continue;
        }
        if (j < d) == decreasing {
            let g = scale * relu_grad(curve[d] - v);
            out[d] += g;
            out[j] -= g;
        } else {
            let g = scale * relu_grad(v - curve[d]);
            out[j] += g;
            out[d] -= g;
        }
    }
}

/// Distance of a membership degree to the nearer crisp pole.
pub fn inclusiveness_term(v: f64) -> f64 {
    v.min(1.0 - v)
}

fn inclusiveness_grad(v: f64) -> f64 {
    if v < 0.5 {
        1.0
    } else if v > 0.5 {
        -1.0
    } else {
        0.0
    }
}

pub fn combined_loss(target: f64, alpha: f64, reg_total: f64, l2_weight: f64, sum_squares: f64) -> f64 {
    target + alpha * reg_total + l2_weight * sum_squares
}

/// Tuples drawn for one regularizer evaluation. Index 0 holds `le`
/// tuples, index 1 `ge` tuples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampledTuples {
    pub reflexivity: Vec<EmbRef>,
    pub antisymmetry: [Vec<(EmbRef, EmbRef)>; 2],
    pub transitivity: [Vec<(EmbRef, EmbRef, EmbRef)>; 2],
    /// `(feature, bin a, bin b)`.
    pub ranking: [Vec<(usize, usize, usize)>; 2],
    /// `(threshold, u, l)` windows.
    pub monotonicity: Vec<(usize, usize, usize)>,
}

impl SampledTuples {
    pub fn is_empty(&self) -> bool {
        self.reflexivity.is_empty()
            && self.antisymmetry.iter().all(Vec::is_empty)
            && self.transitivity.iter().all(Vec::is_empty)
            && self.ranking.iter().all(Vec::is_empty)
            && self.monotonicity.is_empty()
    }
}

/// Gate values and decoded indices held fixed across evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenGates {
    pub transitivity: [Vec<(bool, bool)>; 2],
    /// Decoded bin per threshold (`None` for categorical thresholds).
    pub consistency: Vec<Option<usize>>,
}

/// Elements of `Z_f`: the bins of `f` and every numerical threshold on `f`.
fn z_set(model: &FuzzyModel, f: usize) -> Vec<EmbRef> {
    let mut z: Vec<EmbRef> = (0..model.features[f].cardinality())
        .map(|code| EmbRef::Code { feature: f, code })
        .collect();
    z.extend(
        model
            .thresholds
            .iter()
            .enumerate()
            .filter(|(_, t)| t.feature == f && t.kind != OpKind::Be)
            .map(|(k, _)| EmbRef::Threshold(k)),
    );
    z
}

fn numeric_kinds(model: &FuzzyModel) -> Vec<(usize, OpKind)> {
    let mut kinds = vec![(0, OpKind::Le)];
    if model.operator(OpKind::Ge).is_some() {
        kinds.push((1, OpKind::Ge));
    }
    kinds
}

fn numerical_thresholds(model: &FuzzyModel) -> Vec<usize> {
    (0..model.thresholds.len())
        .filter(|&k| model.thresholds[k].kind != OpKind::Be)
        .collect()
}

/// Draws the tuples for every enabled sampled loss. Disabled losses get no
/// tuples, so no module is evaluated on their behalf.
pub fn sample_tuples<R: Rng>(model: &FuzzyModel, cfg: &RegularizerConfig, rng: &mut R) -> SampledTuples {
    let mut out = SampledTuples::default();
    let features = model.rule_numerical_features();
    let n = cfg.samples_per_loss;
    if features.is_empty() {
        if cfg.enabled.any() && model.features.iter().any(|f| f.is_numerical()) {
            log::debug!("no numerical rule features; sampled regularizers are zero");
        }
    } else {
        let zs: Vec<Vec<EmbRef>> = features.iter().map(|&f| z_set(model, f)).collect();
        let pick = |rng: &mut R, z: &[EmbRef]| z[rng.random_range(0..z.len())];
        for (slot, _) in numeric_kinds(model) {
            if cfg.enabled.reflexivity && slot == 0 {
                out.reflexivity = (0..n)
                    .map(|_| {
                        let z = &zs[rng.random_range(0..zs.len())];
                        pick(rng, z)
                    })
                    .collect();
            }
            if cfg.enabled.antisymmetry {
                out.antisymmetry[slot] = (0..n)
                    .map(|_| {
                        let z = &zs[rng.random_range(0..zs.len())];
                        (pick(rng, z), pick(rng, z))
                    })
                    .collect();
            }
            if cfg.enabled.transitivity {
                out.transitivity[slot] = (0..n)
                    .map(|_| {
                        let z = &zs[rng.random_range(0..zs.len())];
                        (pick(rng, z), pick(rng, z), pick(rng, z))
                    })
                    .collect();
            }
            if cfg.enabled.ranking {
                out.ranking[slot] = (0..n)
                    .map(|_| {
                        let f = features[rng.random_range(0..features.len())];
                        let h = model.features[f].cardinality();
                        (f, rng.random_range(0..h), rng.random_range(0..h))
                    })
                    .collect();
            }
        }
    }
    let numeric = numerical_thresholds(model);
    if cfg.enabled.monotonicity && !numeric.is_empty() {
        out.monotonicity = (0..n)
            .map(|_| {
                let k = numeric[rng.random_range(0..numeric.len())];
                let h = model.features[model.thresholds[k].feature].cardinality();
                let u = rng.random_range(0..h - 1);
                let l = rng.random_range(u + 1..h);
                (k, u, l)
            })
            .collect();
    }
    out
}

/// Per-loss values; `total` is their unweighted sum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegBreakdown {
    pub values: BTreeMap<String, f64>,
    pub total: f64,
}

impl RegBreakdown {
    fn push(&mut self, name: &str, v: f64) {
        self.values.insert(name.to_string(), v);
        self.total += v;
    }

    pub fn get(&self, name: &str) -> f64 {
        self.values.get(name).copied().unwrap_or(0.0)
    }
}

/// Module outputs for the sampled pairs of one numerical module.
struct PairBatch {
    kind: OpKind,
    pairs: Vec<(EmbRef, EmbRef)>,
}

impl PairBatch {
    fn push(&mut self, a: EmbRef, b: EmbRef) -> usize {
        self.pairs.push((a, b));
        self.pairs.len() - 1
    }
}

pub fn freeze_gates(
    model: &FuzzyModel,
    tuples: &SampledTuples,
    tables: &ResponseTables,
) -> Result<FrozenGates> {
    let mut transitivity: [Vec<(bool, bool)>; 2] = Default::default();
    for (slot, kind) in numeric_kinds(model) {
        let trip = &tuples.transitivity[slot];
        if trip.is_empty() {
            continue;
        }
        let pairs: Vec<(EmbRef, EmbRef)> = trip.iter().flat_map(|&(a, b, _)| [(a, b)]).collect();
        let pairs2: Vec<(EmbRef, EmbRef)> = trip.iter().map(|&(_, b, c)| (b, c)).collect();
        let ab = model.eval_pairs::<rand_chacha::ChaCha8Rng>(kind, &pairs, None)?.output;
        let bc = model.eval_pairs::<rand_chacha::ChaCha8Rng>(kind, &pairs2, None)?.output;
        transitivity[slot] = ab.iter().zip(bc.iter()).map(|(&x, &y)| transitivity_gates(x, y)).collect();
    }
    let consistency = model
        .thresholds
        .iter()
        .enumerate()
        .map(|(k, t)| (t.kind != OpKind::Be).then(|| decode_index(&tables.values[k])))
        .collect();
    Ok(FrozenGates {
        transitivity,
        consistency,
    })
}

/// Evaluates every enabled loss.
///
/// When `grads` is given, `scale` times the gradient of the total is
/// accumulated: module/embedding parameters go into the store, table-based
/// terms into the per-entry table gradients (to be pushed through
/// [`FuzzyModel::backward_tables`] by the caller). Gates and decoded bins come
/// from `frozen` when provided, otherwise from the current values.
pub fn regularizer_loss(
    model: &FuzzyModel,
    cfg: &RegularizerConfig,
    tuples: &SampledTuples,
    tables: &ResponseTables,
    frozen: Option<&FrozenGates>,
    scale: f64,
    mut grads: Option<(&mut ParamStore, &mut [Vec<f64>])>,
) -> Result<RegBreakdown> {
    let mut report = RegBreakdown::default();

    for (slot, kind) in numeric_kinds(model) {
        let prefix = if kind == OpKind::Ge { "ge_" } else { "" };
        let mut batch = PairBatch {
            kind,
            pairs: Vec::new(),
        };
        let refl: Vec<usize> = if slot == 0 {
            tuples.reflexivity.iter().map(|&a| batch.push(a, a)).collect()
        } else {
            Vec::new()
        };
        let anti: Vec<(usize, usize)> = tuples.antisymmetry[slot]
            .iter()
            .map(|&(a, b)| (batch.push(a, b), batch.push(b, a)))
            .collect();
        let trans: Vec<(usize, usize, usize)> = tuples.transitivity[slot]
            .iter()
            .map(|&(a, b, c)| (batch.push(a, b), batch.push(b, c), batch.push(a, c)))
            .collect();
        let rank: Vec<(usize, f64)> = tuples.ranking[slot]
            .iter()
            .map(|&(f, a, b)| {
                let h = model.features[f].cardinality();
                let target = if kind == OpKind::Le {
                    ranking_target(a, b, h)
                } else {
                    ranking_target_ge(a, b, h)
                };
                let i = batch.push(
                    EmbRef::Code { feature: f, code: a },
                    EmbRef::Code { feature: f, code: b },
                );
                (i, target)
            })
            .collect();
        if batch.pairs.is_empty() {
            continue;
        }
        let cache = model.eval_pairs::<rand_chacha::ChaCha8Rng>(batch.kind, &batch.pairs, None)?;
        let o = &cache.output;
        let mut d = vec![0.0; batch.pairs.len()];

        if !refl.is_empty() {
            let n = refl.len() as f64;
            report.push("reflexivity", refl.iter().map(|&i| reflexivity_term(o[i])).sum::<f64>() / n);
            for &i in &refl {
                d[i] += scale * abs_grad(o[i] - 0.5) / n;
            }
        }
        if !anti.is_empty() {
            let n = anti.len() as f64;
            let v = anti.iter().map(|&(i, j)| antisymmetry_term(o[i], o[j])).sum::<f64>() / n;
            report.push(&format!("{prefix}antisymmetry"), v);
            for &(i, j) in &anti {
                let g = scale * abs_grad(o[i] + o[j] - 1.0) / n;
                d[i] += g;
                d[j] += g;
            }
        }
        if !trans.is_empty() {
            let n = trans.len() as f64;
            let mut total = 0.0;
            for (t, &(ab, bc, ac)) in trans.iter().enumerate() {
                let gates = match frozen {
                    Some(f) => f.transitivity[slot][t],
                    None => transitivity_gates(o[ab], o[bc]),
                };
                total += transitivity_term_gated(o[ab], o[bc], o[ac], gates);
                let g = scale / n;
                if gates.0 {
                    let m = if o[ab] >= o[bc] { ab } else { bc };
                    let r = relu_grad(o[m] - o[ac]);
                    d[m] += g * r;
                    d[ac] -= g * r;
                }
                if gates.1 {
                    let m = if o[ab] <= o[bc] { ab } else { bc };
                    let r = relu_grad(o[ac] - o[m]);
                    d[ac] += g * r;
                    d[m] -= g * r;
                }
            }
            report.push(&format!("{prefix}transitivity"), total / n);
        }
        if !rank.is_empty() {
            let n = rank.len() as f64;
            let v = rank.iter().map(|&(i, t)| (o[i] - t).abs()).sum::<f64>() / n;
            report.push(&format!("{prefix}ranking"), v);
            for &(i, t) in &rank {
                d[i] += scale * abs_grad(o[i] - t) / n;
            }
        }
        if let Some((store, _)) = grads.as_mut() {
            model.backward_pairs(batch.kind, &batch.pairs, &cache, &d, store)?;
        }
    }

    // table-based losses
    let decreasing = |k: usize| model.thresholds[k].kind == OpKind::Le;
    if !tuples.monotonicity.is_empty() {
        let mut per_kind = [0.0; 2];
        let mut seen = [false; 2];
        let n = tuples.monotonicity.len() as f64;
        for &(k, u, l) in &tuples.monotonicity {
            let curve = &tables.values[k];
            let w = (l - u) as f64;
            let slot = usize::from(!decreasing(k));
            seen[slot] = true;
            per_kind[slot] += monotonicity_term(curve, u, l, decreasing(k)) / w / n;
            if let Some((_, dt)) = grads.as_mut() {
                monotonicity_grad(curve, u, l, decreasing(k), scale / w / n, &mut dt[k]);
            }
        }
        report.push("monotonicity", per_kind[0]);
        if seen[1] {
            report.push("ge_monotonicity", per_kind[1]);
        }
    }
    if cfg.enabled.consistency {
        let numeric = numerical_thresholds(model);
        if !numeric.is_empty() {
            let n = numeric.len() as f64;
            let mut per_kind = [0.0; 2];
            let mut seen = [false; 2];
            for &k in &numeric {
                let curve = &tables.values[k];
                let d = match frozen {
                    Some(f) => f.consistency[k].unwrap_or(0),
                    None => decode_index(curve),
                };
                let w = (curve.len() - 1) as f64;
                let slot = usize::from(!decreasing(k));
                seen[slot] = true;
                per_kind[slot] += consistency_term(curve, d, decreasing(k)) / w / n;
                if let Some((_, dt)) = grads.as_mut() {
                    consistency_grad(curve, d, decreasing(k), scale / w / n, &mut dt[k]);
                }
            }
            report.push("consistency", per_kind[0]);
            if seen[1] {
                report.push("ge_consistency", per_kind[1]);
            }
        }
    }
    if cfg.enabled.inclusiveness {
        let cat: Vec<usize> = (0..model.thresholds.len())
            .filter(|&k| model.thresholds[k].kind == OpKind::Be)
            .collect();
        let n: usize = cat.iter().map(|&k| tables.values[k].len()).sum();
        if n > 0 {
            let n = n as f64;
            let mut total = 0.0;
            for &k in &cat {
                for (c, &v) in tables.values[k].iter().enumerate() {
                    total += inclusiveness_term(v);
                    if let Some((_, dt)) = grads.as_mut() {
                        dt[k][c] += scale * inclusiveness_grad(v) / n;
                    }
                }
            }
            report.push("inclusiveness", total / n);
        }
    }
    Ok(report)
}
