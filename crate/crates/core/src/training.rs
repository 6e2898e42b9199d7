//! Mini-batch optimization of the rule model.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use crate::data::{EncodedDataset, SplitTag};
use crate::error::{NsdtError, Result};
use crate::fuzzy::{FuzzyModel, ParamStore};
use crate::metrics::{balanced_accuracy, summarize, Summary};
use crate::regularizers::{
    freeze_gates, regularizer_loss, sample_tuples, FrozenGates, RegBreakdown, RegularizerConfig,
    SampledTuples,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceMode {
    #[default]
    ClassWeights,
    Oversample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub dropout_rate: f64,
    pub l2_weight: f64,
    pub regularizer: RegularizerConfig,
    pub imbalance_mode: ImbalanceMode,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Regularizer-only steps shaping the operators before fine-tuning;
    /// thresholds are re-seeded afterwards. Skipped when regularizers are off.
    pub warmup_steps: usize,
    pub warmup_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 100,
            early_stop_patience: 10,
            dropout_rate: 0.1,
            l2_weight: 1e-5,
            regularizer: RegularizerConfig::default(),
            imbalance_mode: ImbalanceMode::ClassWeights,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            warmup_steps: 300,
            warmup_learning_rate: 3e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NsdtError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) || !(self.warmup_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(self.l2_weight >= 0.0) {
            return bad("l2_weight must be non-negative");
        }
        self.regularizer.validate()
    }
}

/// Codes, labels and split rows used by training.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub codes: ArrayView2<'a, u32>,
    pub target: &'a [u8],
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

impl<'a> TrainData<'a> {
    pub fn from_encoded(data: &'a EncodedDataset) -> Self {
        Self {
            codes: data.codes.view(),
            target: &data.target,
            train: data.rows(SplitTag::Train),
            valid: data.rows(SplitTag::Valid),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Imbalance {
    /// Per-class weights, normalized so the per-sample mean is 1.
    Weights([f64; 2]),
    /// Row multiset with equal class counts.
    Resampled(Vec<usize>),
}

pub fn class_weights(labels: &[u8]) -> Result<[f64; 2]> {
    let n1 = labels.iter().filter(|&&y| y != 0).count();
    let n0 = labels.len() - n1;
    if n0 == 0 {
        return Err(NsdtError::MissingClass(0));
    }
    if n1 == 0 {
        return Err(NsdtError::MissingClass(1));
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
}

/// Class weights or an oversampled row list for `rows`.
pub fn handle_imbalance(target: &[u8], rows: &[usize], mode: ImbalanceMode, seed: u64) -> Result<Imbalance> {
    let labels: Vec<u8> = rows.iter().map(|&r| target[r]).collect();
    let weights = class_weights(&labels)?;
    match mode {
        ImbalanceMode::ClassWeights => Ok(Imbalance::Weights(weights)),
        ImbalanceMode::Oversample => {
            let (pos, neg): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| target[r] != 0);
            let (major, minor) = if pos.len() >= neg.len() { (pos, neg) } else { (neg, pos) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = major.clone();
            out.extend(&minor);
            for _ in 0..major.len() - minor.len() {
                out.push(minor[rng.random_range(0..minor.len())]);
            }
            out.sort_unstable();
            Ok(Imbalance::Resampled(out))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub target: f64,
    pub regularizer: RegBreakdown,
    pub l2: f64,
    pub total: f64,
}

fn softmax2(z0: f64, z1: f64) -> (f64, f64) {
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    (e0 / (e0 + e1), e1 / (e0 + e1))
}

/// Weighted mean cross-entropy `sum w_i CE_i / n` without dropout.
pub fn target_loss(model: &FuzzyModel, codes: ArrayView2<'_, u32>, target: &[u8], rows: &[usize], weights: [f64; 2]) -> Result<f64> {
    let logits = model.logits_for(codes, rows)?;
    let mut loss = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        let (p0, p1) = softmax2(logits[[i, 0]], logits[[i, 1]]);
        let y = usize::from(target[r] != 0);
        loss -= weights[y] * [p0, p1][y].max(1e-300).ln();
    }
    Ok(loss / rows.len().max(1) as f64)
}

/// Regularizer inputs for one step.
pub struct RegInputs<'a> {
    pub config: &'a RegularizerConfig,
    pub tuples: &'a SampledTuples,
    pub frozen: Option<&'a FrozenGates>,
}

/// Combined loss and its gradient for one batch.
pub fn loss_and_gradient(
    model: &FuzzyModel,
    codes: ArrayView2<'_, u32>,
    target: &[u8],
    batch: &[usize],
    weights: [f64; 2],
    l2_weight: f64,
    reg: Option<RegInputs<'_>>,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
    grads: &mut ParamStore,
) -> Result<StepLoss> {
    grads.fill_zero();
    let tables = model.compute_tables(dropout)?;
    let mut d_values = tables.zeros_like();
    let mut loss = StepLoss::default();

    if !batch.is_empty() {
        let r = model.rule_matrix(&tables, codes, batch);
        let logits = model.head_logits(&r);
        let n = batch.len() as f64;
        let mut dz = Array2::zeros((batch.len(), 2));
        for (i, &row) in batch.iter().enumerate() {
            let (p0, p1) = softmax2(logits[[i, 0]], logits[[i, 1]]);
            let y = usize::from(target[row] != 0);
            let w = weights[y];
            loss.target -= w * [p0, p1][y].max(1e-300).ln() / n;
            dz[[i, 0]] = w * (p0 - f64::from(u8::from(y == 0))) / n;
            dz[[i, 1]] = w * (p1 - f64::from(u8::from(y == 1))) / n;
        }
        let (hw, hb) = model.head();
        *grads.get_mut(hw) += &r.t().dot(&dz);
        *grads.get_mut(hb) += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_r = dz.dot(&model.params.get(hw).t());
        model.backward_rules(&tables, codes, batch, &d_r, &mut d_values);
    }

    let mut alpha = 0.0;
    if let Some(reg) = reg {
        alpha = reg.config.alpha;
        loss.regularizer = regularizer_loss(
            model,
            reg.config,
            reg.tuples,
            &tables,
            reg.frozen,
            alpha,
            Some((grads, &mut d_values)),
        )?;
    }
    model.backward_tables(&tables, &d_values, grads)?;

    if l2_weight > 0.0 {
        loss.l2 = l2_weight * model.params.sum_squares();
        grads.add_scaled(2.0 * l2_weight, &model.params);
    }
    loss.total = loss.target + alpha * loss.regularizer.total + loss.l2;
    Ok(loss)
}

enum Optimizer {
    Adam { m: ParamStore, v: ParamStore, t: i32 },
    Momentum { v: ParamStore, mu: f64 },
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: &ParamStore, momentum: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                m: params.zeros_like(),
                v: params.zeros_like(),
                t: 0,
            },
            OptimizerKind::Momentum => Optimizer::Momentum {
                v: params.zeros_like(),
                mu: momentum,
            },
        }
    }

    fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) {
        match self {
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                let iter = params
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(m.iter_mut().zip(v.iter_mut()));
                for (((_, p), (_, g)), ((_, m), (_, v))) in iter {
                    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                    });
                }
            }
            Optimizer::Momentum { v, mu } => {
                for (((_, p), (_, g)), (_, v)) in params.iter_mut().zip(grads.iter()).zip(v.iter_mut()) {
                    ndarray::Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
                        *v = *mu * *v + g;
                        *p -= lr * *v;
                    });
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub target_loss: f64,
    pub regularizer: BTreeMap<String, f64>,
    pub train_balanced_accuracy: f64,
    pub valid_balanced_accuracy: f64,
    /// Hash of the batch row sequence, for checking that arms see the same data.
    pub batch_hash: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub warmup_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_balanced_accuracy: f64,
    pub steps: usize,
}

pub fn evaluate(model: &FuzzyModel, codes: ArrayView2<'_, u32>, target: &[u8], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let (_, pred) = model.predict(codes, rows)?;
    let truth: Vec<u8> = rows.iter().map(|&r| target[r]).collect();
    Ok(balanced_accuracy(&truth, &pred))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_finite(loss: &StepLoss, grads: &ParamStore, step: usize) -> Result<()> {
    if !loss.total.is_finite() {
        return Err(NsdtError::Divergence { step, loss: loss.total });
    }
    if let Some(name) = grads.all_finite() {
        return Err(NsdtError::NonFiniteGradient(format!("{name} at step {step}")));
    }
    Ok(())
}

/// Regularizer-only steps on the operator modules and embeddings, then a
/// fresh threshold initialization from the shaped embeddings.
pub fn warm_up_operators(model: &mut FuzzyModel, cfg: &TrainConfig, history: &mut TrainHistory) -> Result<()> {
    if cfg.warmup_steps == 0 || !cfg.regularizer.active() {
        return Ok(());
    }
    let mut rng = stream(cfg.seed, 3);
    let mut opt = Optimizer::new(cfg.optimizer, &model.params, cfg.momentum);
    let mut grads = model.params.zeros_like();
    let unit = RegularizerConfig {
        alpha: 1.0,
        ..cfg.regularizer.clone()
    };
    for step in 0..cfg.warmup_steps {
        let tuples = sample_tuples(model, &unit, &mut rng);
        let loss = loss_and_gradient(
            model,
            ndarray::Array2::<u32>::zeros((0, model.features.len())).view(),
            &[],
            &[],
            [1.0, 1.0],
            0.0,
            Some(RegInputs { config: &unit, tuples: &tuples, frozen: None }),
            None,
            &mut grads,
        )?;
        let total = loss.regularizer.total;
        if !total.is_finite() {
            return Err(NsdtError::Divergence { step, loss: total });
        }
        // leave the head untouched
        let (hw, hb) = model.head();
        grads.get_mut(hw).fill(0.0);
        grads.get_mut(hb).fill(0.0);
        opt.step(&mut model.params, &grads, cfg.warmup_learning_rate);
        if step % 50 == 0 || step + 1 == cfg.warmup_steps {
            history.warmup_losses.push(total);
        }
    }
    model.reseed_thresholds(cfg.seed ^ 0x5eed);
    Ok(())
}

/// Trains `model` in place and restores the parameters with the best
/// validation balanced accuracy.
pub fn train(model: &mut FuzzyModel, data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(NsdtError::EmptySplit("train"));
    }
    model.params.all_finite().map_or(Ok(()), |n| {
        Err(NsdtError::NonFiniteGradient(format!("initial parameter {n}")))
    })?;
    let mut history = TrainHistory::default();
    warm_up_operators(model, cfg, &mut history)?;

    let (weights, pool) = match handle_imbalance(data.target, &data.train, cfg.imbalance_mode, cfg.seed)? {
        Imbalance::Weights(w) => (w, data.train.clone()),
        Imbalance::Resampled(rows) => ([1.0, 1.0], rows),
    };
    let valid_rows = if data.valid.is_empty() { &data.train } else { &data.valid };

    let mut batch_rng = stream(cfg.seed, 0);
    let mut dropout_rng = stream(cfg.seed, 1);
    let mut reg_rng = stream(cfg.seed, 2);
    let mut opt = Optimizer::new(cfg.optimizer, &model.params, cfg.momentum);
    let mut grads = model.params.zeros_like();
    let mut best = model.params.clone();
    history.best_valid_balanced_accuracy = f64::NEG_INFINITY;
    let mut since_best = 0;
    let reg_active = cfg.regularizer.active();

    for epoch in 0..cfg.max_epochs {
        let mut order = pool.clone();
        order.shuffle(&mut batch_rng);
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        order.hash(&mut hasher);
        let (mut total, mut target) = (0.0, 0.0);
        let mut reg_sum: BTreeMap<String, f64> = BTreeMap::new();
        let mut n_batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let tuples;
            let reg = if reg_active {
                tuples = sample_tuples(model, &cfg.regularizer, &mut reg_rng);
                Some(RegInputs { config: &cfg.regularizer, tuples: &tuples, frozen: None })
            } else {
                None
            };
            let dropout = (cfg.dropout_rate > 0.0).then_some((cfg.dropout_rate, &mut dropout_rng));
            let loss = loss_and_gradient(model, data.codes, data.target, batch, weights, cfg.l2_weight, reg, dropout, &mut grads)?;
            check_finite(&loss, &grads, history.steps)?;
            opt.step(&mut model.params, &grads, cfg.learning_rate);
            history.steps += 1;
            total += loss.total;
            target += loss.target;
            for (k, v) in &loss.regularizer.values {
                *reg_sum.entry(k.clone()).or_default() += v;
                log::trace!("step {} {k} {v}", history.steps);
            }
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let train_bacc = evaluate(model, data.codes, data.target, &data.train)?;
        let valid_bacc = evaluate(model, data.codes, data.target, valid_rows)?;
        history.epochs.push(EpochRecord {
            epoch,
            total_loss: total / nb,
            target_loss: target / nb,
            regularizer: reg_sum.into_iter().map(|(k, v)| (k, v / nb)).collect(),
            train_balanced_accuracy: train_bacc,
            valid_balanced_accuracy: valid_bacc,
            batch_hash: hasher.finish(),
        });
        log::debug!("epoch {epoch}: loss {:.4} valid bacc {valid_bacc:.4}", total / nb);
        if valid_bacc > history.best_valid_balanced_accuracy {
            history.best_valid_balanced_accuracy = valid_bacc;
            history.best_epoch = epoch;
            best = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    model.params = best;
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: Option<String>,
    pub n_parameters: usize,
}

/// Relative error with a floor on the denominator, so that gradients near
/// zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Analytic gradient of the combined loss against central differences with
/// step `h`. Tuples are drawn once from `seed`; gates and decoded bins are
/// frozen at the unperturbed parameters; dropout is off.
pub fn gradient_check(
    model: &FuzzyModel,
    codes: ArrayView2<'_, u32>,
    target: &[u8],
    rows: &[usize],
    reg: Option<&RegularizerConfig>,
    l2_weight: f64,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport> {
    let weights = class_weights(&rows.iter().map(|&r| target[r]).collect::<Vec<_>>()).unwrap_or([1.0, 1.0]);
    let tuples = match reg {
        Some(cfg) => sample_tuples(model, cfg, &mut ChaCha8Rng::seed_from_u64(seed)),
        None => SampledTuples::default(),
    };
    let base_tables = model.compute_tables::<ChaCha8Rng>(None)?;
    let frozen = freeze_gates(model, &tuples, &base_tables)?;
    let eval = |m: &FuzzyModel, grads: &mut ParamStore| -> Result<f64> {
        let inputs = reg.map(|cfg| RegInputs { config: cfg, tuples: &tuples, frozen: Some(&frozen) });
        let loss = loss_and_gradient(m, codes, target, rows, weights, l2_weight, inputs, None, grads)?;
        Ok(loss.total)
    };
    let mut analytic = model.params.zeros_like();
    eval(model, &mut analytic)?;
    if let Some(name) = analytic.all_finite() {
        return Err(NsdtError::NonFiniteGradient(name.to_string()));
    }
    let mut scratch = model.params.zeros_like();
    let mut probe = model.clone();
    let mut worst = (0.0, None);
    for flat in 0..model.params.n_scalars() {
        let orig = probe.params.scalar(flat);
        *probe.params.scalar_mut(flat) = orig + h;
        let up = eval(&probe, &mut scratch)?;
        *probe.params.scalar_mut(flat) = orig - h;
        let down = eval(&probe, &mut scratch)?;
        *probe.params.scalar_mut(flat) = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic.scalar(flat), numeric);
        if !err.is_finite() {
            return Err(NsdtError::NonFiniteGradient(model.params.scalar_owner(flat).to_string()));
        }
        if err > worst.0 {
            worst = (err, Some(format!("{}[{flat}]", model.params.scalar_owner(flat))));
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_parameter: worst.1,
        n_parameters: model.params.n_scalars(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub repeat: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeededSummary {
    pub runs: Vec<RunRecord>,
    pub summary: BTreeMap<String, Summary>,
    /// Fewer than the full 5 seeds x 5 repeats.
    pub reduced_replication: bool,
}

pub const FULL_SEEDS: usize = 5;
pub const FULL_REPEATS: usize = 5;

/// Runs `experiment(seed, repeat)` for every combination and summarizes each metric.
pub fn run_seeded<F>(seeds: &[u64], repeats: usize, mut experiment: F) -> Result<SeededSummary>
where
    F: FnMut(u64, usize) -> Result<BTreeMap<String, f64>>,
{
    let mut runs = Vec::new();
    for &seed in seeds {
        for repeat in 0..repeats {
            runs.push(RunRecord { seed, repeat, metrics: experiment(seed, repeat)? });
        }
    }
    let mut by_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in &runs {
        for (k, v) in &run.metrics {
            by_metric.entry(k.clone()).or_default().push(*v);
        }
    }
    Ok(SeededSummary {
        summary: by_metric.iter().map(|(k, v)| (k.clone(), summarize(v))).collect(),
        reduced_replication: seeds.len() < FULL_SEEDS || repeats < FULL_REPEATS,
        runs,
    })
}
