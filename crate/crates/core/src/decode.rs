//! Turning trained threshold embeddings back into symbols.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::data::BinMapping;
use crate::error::{NsdtError, Result};
use crate::fuzzy::{FuzzyModel, OpKind, ResponseTables};
use crate::tree::{Condition, Threshold};

pub const DEFAULT_MEMBERSHIP_CUT: f64 = 0.9;

/// Index of the response closest to 0.5; ties go to the lowest index.
pub fn decode_index(curve: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in curve.iter().enumerate() {
        if (v - 0.5).abs() < (curve[best] - 0.5).abs() {
            best = i;
        }
    }
    best
}

/// Levels whose membership exceeds `cut`.
pub fn decode_level_set(curve: &[f64], cut: f64) -> Vec<u32> {
    curve
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cut)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Strict cut-off test around `d`: bins on the satisfied side respond
/// strictly above `curve[d]`, the others strictly below.
pub fn numerical_node_valid(curve: &[f64], d: usize, decreasing: bool) -> bool {
    curve.iter().enumerate().all(|(j, &v)| {
        if j == d {
            true
        } else if (j < d) == decreasing {
            curve[d] < v
        } else {
            curve[d] > v
        }
    })
}

/// Crisp membership: every response outside `[1 - cut, cut]`.
pub fn categorical_node_valid(curve: &[f64], cut: f64) -> bool {
    curve.iter().all(|&v| v > cut || v < 1.0 - cut)
}

pub fn strictly_monotone(curve: &[f64], decreasing: bool) -> bool {
    curve.windows(2).all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] })
}

fn tables(model: &FuzzyModel) -> Result<ResponseTables> {
    model.compute_tables::<rand_chacha::ChaCha8Rng>(None)
}

fn check_threshold(model: &FuzzyModel, k: usize) -> Result<()> {
    if k >= model.n_thresholds() {
        return Err(NsdtError::ContractViolation(format!("no threshold {k}")));
    }
    Ok(())
}

pub fn decode_numerical_threshold(model: &FuzzyModel, k: usize) -> Result<usize> {
    check_threshold(model, k)?;
    if model.thresholds[k].kind == OpKind::Be {
        return Err(NsdtError::ContractViolation(format!("threshold {k} is categorical")));
    }
    Ok(decode_index(&tables(model)?.values[k]))
}

pub fn decode_categorical_threshold(model: &FuzzyModel, k: usize, cut: f64) -> Result<Vec<u32>> {
    check_threshold(model, k)?;
    if model.thresholds[k].kind != OpKind::Be {
        return Err(NsdtError::ContractViolation(format!("threshold {k} is numerical")));
    }
    Ok(decode_level_set(&tables(model)?.values[k], cut))
}

/// The decoded symbolic value of one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Decoded {
    Bin { bin: usize },
    Levels { levels: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostic {
    pub threshold: usize,
    pub feature: usize,
    pub feature_name: String,
    pub kind: OpKind,
    pub decoded: Decoded,
    pub valid: bool,
    pub monotone: Option<bool>,
    pub responses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    /// Percent of valid numerical nodes, `None` when there are none.
    pub numerical_validity: Option<f64>,
    pub categorical_validity: Option<f64>,
    /// Percent of numerical nodes whose full response curve is strictly monotone.
    pub monotone_share: Option<f64>,
    pub numerical_nodes: usize,
    pub categorical_nodes: usize,
    pub nodes: Vec<NodeDiagnostic>,
}

fn percent(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * hits as f64 / total as f64)
}

pub fn validity_report(model: &FuzzyModel, cut: f64) -> Result<ValidityReport> {
    let t = tables(model)?;
    let mut nodes = Vec::with_capacity(model.n_thresholds());
    for (k, node) in model.thresholds.iter().enumerate() {
        let curve = t.values[k].clone();
        let (decoded, valid, monotone) = if node.kind == OpKind::Be {
            (
                Decoded::Levels {
                    levels: decode_level_set(&curve, cut),
                },
                categorical_node_valid(&curve, cut),
                None,
            )
        } else {
            let d = decode_index(&curve);
            let decreasing = node.kind == OpKind::Le;
            (
                Decoded::Bin { bin: d },
                numerical_node_valid(&curve, d, decreasing),
                Some(strictly_monotone(&curve, decreasing)),
            )
        };
        nodes.push(NodeDiagnostic {
            threshold: k,
            feature: node.feature,
            feature_name: model.features[node.feature].name.clone(),
            kind: node.kind,
            decoded,
            valid,
            monotone,
            responses: curve,
        });
    }
    let num: Vec<&NodeDiagnostic> = nodes.iter().filter(|n| n.kind != OpKind::Be).collect();
    let cat: Vec<&NodeDiagnostic> = nodes.iter().filter(|n| n.kind == OpKind::Be).collect();
    Ok(ValidityReport {
        numerical_validity: percent(num.iter().filter(|n| n.valid).count(), num.len()),
        categorical_validity: percent(cat.iter().filter(|n| n.valid).count(), cat.len()),
        monotone_share: percent(num.iter().filter(|n| n.monotone == Some(true)).count(), num.len()),
        numerical_nodes: num.len(),
        categorical_nodes: cat.len(),
        nodes,
    })
}

pub fn numerical_validity(model: &FuzzyModel) -> Result<Option<f64>> {
    Ok(validity_report(model, DEFAULT_MEMBERSHIP_CUT)?.numerical_validity)
}

pub fn categorical_validity(model: &FuzzyModel, cut: f64) -> Result<Option<f64>> {
    Ok(validity_report(model, cut)?.categorical_validity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedCondition {
    pub feature: String,
    pub op: String,
    /// Rendered threshold: a raw-unit edge value or a level list.
    pub threshold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedRule {
    pub rule: usize,
    pub leaf_id: usize,
    /// Head weights `[negative, positive]`.
    pub weight: [f64; 2],
    pub conditions: Vec<DecodedCondition>,
}

impl DecodedRule {
    /// Net vote towards the positive class.
    pub fn score(&self) -> f64 {
        self.weight[1] - self.weight[0]
    }
}

/// Every rule's conditions with thresholds replaced by their decoded values.
pub fn decoded_conditions(model: &FuzzyModel, cut: f64) -> Result<Vec<Vec<Condition>>> {
    let t = tables(model)?;
    Ok(model
        .rules
        .rules
        .iter()
        .enumerate()
        .map(|(l, rule)| {
            rule.slots
                .iter()
                .enumerate()
                .filter_map(|(s, c)| {
                    let c = c.as_ref()?;
                    let slot = model.slots[l][s].expect("slot for condition");
                    let curve = &t.values[slot.threshold];
                    let threshold = if c.op.is_numerical() {
                        Threshold::Bin(decode_index(curve) as u32)
                    } else {
                        Threshold::Levels(decode_level_set(curve, cut))
                    };
                    Some(Condition {
                        feature: c.feature,
                        op: c.op,
                        threshold,
                        node: c.node,
                    })
                })
                .collect()
        })
        .collect())
}

fn format_value(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    format!("{r}")
}

/// Renders every rule with decoded thresholds. Conditions on features named
/// in `redact` are omitted; rules and weights are kept.
pub fn extract_rules_report(
    model: &FuzzyModel,
    mappings: &[Option<BinMapping>],
    redact: &[String],
    cut: f64,
) -> Result<Vec<DecodedRule>> {
    let decoded = decoded_conditions(model, cut)?;
    let (w, _) = model.head();
    let w = model.params.get(w);
    let mut out = Vec::with_capacity(decoded.len());
    for (l, conds) in decoded.iter().enumerate() {
        let mut conditions = Vec::new();
        for c in conds {
            let spec = &model.features[c.feature];
            if redact.iter().any(|r| r == &spec.name) {
                continue;
            }
            let threshold = match (&c.threshold, mappings.get(c.feature).and_then(Option::as_ref)) {
                (Threshold::Bin(b), Some(m)) => format_value(m.left_edge(*b)),
                (Threshold::Bin(b), None) => format!("bin {b}"),
                (Threshold::Levels(levels), _) => {
                    let names: Vec<String> = levels
                        .iter()
                        .map(|&i| format!("'{}'", spec.decode_level(i).unwrap_or("?")))
                        .collect();
                    format!("[{}]", names.join(", "))
                }
            };
            conditions.push(DecodedCondition {
                feature: spec.name.clone(),
                op: c.op.glyph().to_string(),
                threshold,
            });
        }
        out.push(DecodedRule {
            rule: l,
            leaf_id: model.rules.rules[l].leaf_id,
            weight: [w[[l, 0]], w[[l, 1]]],
            conditions,
        });
    }
    Ok(out)
}

pub fn render_rules(rules: &[DecodedRule]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>6}  {:>9}  rule", "index", "weight");
    for r in rules {
        let body = if r.conditions.is_empty() {
            "(always)".to_string()
        } else {
            r.conditions
                .iter()
                .map(|c| format!("({} {} {})", c.feature, c.op, c.threshold))
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        let _ = writeln!(s, "{:>6}  {:>9.3}  {body}", r.rule, r.score());
    }
    s
}

/// Module outputs for chosen probe bins against one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub threshold: usize,
    pub feature: String,
    pub kind: OpKind,
    pub probes: Vec<usize>,
    pub outputs: Vec<f64>,
}

pub fn operator_response_table(model: &FuzzyModel, k: usize, probes: &[usize]) -> Result<ResponseTable> {
    check_threshold(model, k)?;
    let node = &model.thresholds[k];
    let card = model.features[node.feature].cardinality();
    if let Some(&p) = probes.iter().find(|&&p| p >= card) {
        return Err(NsdtError::CodeOutOfRange {
            feature: node.feature,
            code: p as u32,
            cardinality: card,
        });
    }
    let curve = &tables(model)?.values[k];
    Ok(ResponseTable {
        threshold: k,
        feature: model.features[node.feature].name.clone(),
        kind: node.kind,
        probes: probes.to_vec(),
        outputs: probes.iter().map(|&p| curve[p]).collect(),
    })
}

/// `n` probe bins spread evenly over `h` bins, endpoints included.
pub fn even_probes(h: usize, n: usize) -> Vec<usize> {
    if n <= 1 || h <= 1 {
        return vec![0];
    }
    let mut p: Vec<usize> = (0..n)
        .map(|i| ((i * (h - 1)) as f64 / (n - 1) as f64).round() as usize)
        .collect();
    p.dedup();
    p
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

pub fn render_response_table(t: &ResponseTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} module, feature {}, threshold #{}",
        t.kind.as_str(),
        t.feature,
        t.threshold
    );
    let _ = writeln!(s, "{:>8}  {:>8}", "bin", "output");
    for (p, o) in t.probes.iter().zip(&t.outputs) {
        let _ = writeln!(s, "{:>8}  {:>8.3}", ordinal(p + 1), o);
    }
    s
}

pub fn render_validity(r: &ValidityReport) -> String {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.1}%"));
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>8} {:>8}", "node type", "nodes", "valid");
    let _ = writeln!(s, "{:<28} {:>8} {:>8}", "numerical", r.numerical_nodes, fmt(r.numerical_validity));
    let _ = writeln!(s, "{:<28} {:>8} {:>8}", "categorical", r.categorical_nodes, fmt(r.categorical_validity));
    let _ = writeln!(s, "{:<28} {:>8} {:>8}", "numerical, monotone curve", r.numerical_nodes, fmt(r.monotone_share));
    s
}
