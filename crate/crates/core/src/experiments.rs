//! End-to-end runs: symbolic pre-training, neural fine-tuning, baselines,
//! ablation and robustness protocols, and comparison with reference values.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::hash::{Hash, Hasher};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_predict_baseline, BaselineConfig, BaselineKind};
use crate::data::sources::{default_cache_dir, load_raw, source_files, source_url, sources_present};
use crate::data::{
    correlation_drop_check, prepare, read_encoded, synthetic_table, write_encoded, AssociationDrop, BinMapping,
    CleaningReport, DatasetId, EncodedDataset, NoiseConfig, NoiseReport, PrepareConfig, Prepared, SplitTag,
    SyntheticProfile, Table,
};
use crate::decode::{
    even_probes, extract_rules_report, numerical_validity, operator_response_table, render_response_table,
    render_rules, render_validity, validity_report, DecodedRule, ResponseTable, ValidityReport,
    DEFAULT_MEMBERSHIP_CUT,
};
use crate::error::{NsdtError, Result};
use crate::fuzzy::{load_checkpoint, save_checkpoint, FuzzyModel, ModelConfig, Variant};
use crate::metrics::{balanced_accuracy, robustness_drop, summarize};
use crate::regularizers::EnabledLosses;
use crate::training::{class_weights, run_seeded, train, SeededSummary, TrainConfig, TrainData, TrainHistory};
use crate::tree::{fit_symbolic_tree, symbolic_rule_set, DedupePolicy, SymbolicTree, TreeConfig, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tree_depth: usize,
    pub tree_min_leaf: usize,
    pub dedupe: DedupePolicy,
    /// Start rule weights at the smoothed log-odds of their leaves.
    pub head_from_leaves: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tree_depth: 6,
            tree_min_leaf: 50,
            dedupe: DedupePolicy::default(),
            head_from_leaves: true,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.model.seed = seed;
        c.train.seed = seed;
        c
    }
}

#[derive(Debug, Clone)]
pub struct NeuralRun {
    pub tree: SymbolicTree,
    pub model: FuzzyModel,
    pub history: TrainHistory,
    /// Test balanced accuracy of the symbolic tree the model was built from.
    pub tree_test_balanced_accuracy: f64,
    pub test_balanced_accuracy: f64,
}

pub fn split_truth(data: &EncodedDataset, rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&r| data.target[r]).collect()
}

fn leaf_mass(tree: &SymbolicTree) -> Vec<[f64; 2]> {
    let mut mass = vec![[0.0; 2]; tree.n_leaves];
    for node in &tree.nodes {
        if let TreeNode::Leaf { leaf_id, counts } = node {
            mass[*leaf_id] = *counts;
        }
    }
    mass
}

/// Fits the class-weighted symbolic tree on the training split.
pub fn pretrain_tree(data: &EncodedDataset, cfg: &PipelineConfig) -> Result<SymbolicTree> {
    let train_rows = data.rows(SplitTag::Train);
    let w = class_weights(&split_truth(data, &train_rows))?;
    let tc = TreeConfig {
        max_depth: cfg.tree_depth,
        min_leaf: cfg.tree_min_leaf,
        class_weights: w,
        max_features: None,
        seed: cfg.train.seed,
    };
    fit_symbolic_tree(data.codes.view(), &data.target, &data.features, &train_rows, &tc)
}

/// Builds the fuzzy model for a fitted tree (untrained).
pub fn build_model(data: &EncodedDataset, tree: &SymbolicTree, variant: Variant, cfg: &PipelineConfig) -> Result<FuzzyModel> {
    let rules = symbolic_rule_set(tree, cfg.tree_depth, cfg.dedupe)?;
    let mut model = FuzzyModel::build(&rules, &data.features, &cfg.model, variant)?;
    if cfg.head_from_leaves {
        model.init_head_from_leaves(&leaf_mass(tree), 1.0);
    }
    Ok(model)
}

/// Symbolic pre-training followed by neural fine-tuning; scores both on the test split.
pub fn fit_neural(data: &EncodedDataset, variant: Variant, cfg: &PipelineConfig) -> Result<NeuralRun> {
    let tree = pretrain_tree(data, cfg)?;
    let mut model = build_model(data, &tree, variant, cfg)?;
    let history = train(&mut model, &TrainData::from_encoded(data), &cfg.train)?;
    let test = data.rows(SplitTag::Test);
    let truth = split_truth(data, &test);
    let tree_pred: Vec<u8> = test.iter().map(|&r| tree.predict(data.codes.row(r).as_slice().expect("row-major"))).collect();
    let (_, pred) = model.predict(data.codes.view(), &test)?;
    Ok(NeuralRun {
        tree_test_balanced_accuracy: balanced_accuracy(&truth, &tree_pred),
        test_balanced_accuracy: balanced_accuracy(&truth, &pred),
        tree,
        model,
        history,
    })
}

// ---------------------------------------------------------------------------
// Reference values and comparison tables

pub const REFERENCE_TOML: &str = include_str!("../reference/reference_values.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub balanced_accuracy: f64,
    pub validity_percent: f64,
    pub drop_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRef {
    pub all_regs: f64,
    pub no_reg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRef {
    pub before: f64,
    pub after: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRef {
    pub numerical: Option<f64>,
    pub categorical: Option<f64>,
}

/// Published numbers shipped with the crate, keyed by dataset then model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub version: u32,
    pub source: String,
    pub tolerance: Tolerance,
    pub performance: BTreeMap<String, BTreeMap<String, f64>>,
    pub ablation: BTreeMap<String, AblationRef>,
    pub robustness: BTreeMap<String, BTreeMap<String, RobustnessRef>>,
    pub validity: BTreeMap<String, ValidityRef>,
}

impl ReferenceValues {
    pub fn bundled() -> Result<Self> {
        Ok(toml::from_str(REFERENCE_TOML)?)
    }

    pub fn performance(&self, dataset: DatasetId, model: &str) -> Option<f64> {
        self.performance.get(dataset.as_str())?.get(model).copied()
    }

    pub fn robustness(&self, dataset: DatasetId, model: &str) -> Option<&RobustnessRef> {
        self.robustness.get(dataset.as_str())?.get(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Within,
    Outside,
    NoReference,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Within => "ok",
            Verdict::Outside => "DEVIATES",
            Verdict::NoReference => "-",
        }
    }
}

/// One line of a comparison table: a measured value next to its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    /// `None` for rows that only carry a reference value.
    pub measured: Option<f64>,
    pub std: Option<f64>,
    pub reference: Option<f64>,
    pub tolerance: Option<f64>,
    pub verdict: Verdict,
}

pub fn compare(metric: impl Into<String>, measured: f64, std: Option<f64>, reference: Option<f64>, tolerance: f64) -> ComparisonRow {
    let verdict = match reference {
        None => Verdict::NoReference,
        Some(r) if (measured - r).abs() <= tolerance => Verdict::Within,
        Some(_) => Verdict::Outside,
    };
    ComparisonRow {
        metric: metric.into(),
        measured: Some(measured),
        std,
        reference,
        tolerance: reference.map(|_| tolerance),
        verdict,
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

pub fn render_comparison(title: &str, rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{title}\n");
    s.push_str(&format!(
        "{:<width$}  {:>9}  {:>7}  {:>9}  {:>6}  verdict\n",
        "metric", "measured", "std", "reference", "tol"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>9}  {:>7}  {:>9}  {:>6}  {}\n",
            r.metric,
            opt(r.measured, 4),
            opt(r.std, 4),
            opt(r.reference, 3),
            opt(r.tolerance, 3),
            r.verdict.as_str()
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Manifests and configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nsdt,
    Gnsdt,
    Knn,
    Dtree,
    Rforest,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Nsdt, ModelKind::Gnsdt, ModelKind::Knn, ModelKind::Dtree, ModelKind::Rforest];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nsdt => "nsdt",
            ModelKind::Gnsdt => "gnsdt",
            ModelKind::Knn => "knn",
            ModelKind::Dtree => "dtree",
            ModelKind::Rforest => "rforest",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            ModelKind::Nsdt => Some(Variant::Nsdt),
            ModelKind::Gnsdt => Some(Variant::Gnsdt),
            _ => None,
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelKind::Knn => Some(BaselineKind::Knn),
            ModelKind::Dtree => Some(BaselineKind::Dtree),
            ModelKind::Rforest => Some(BaselineKind::Rforest),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = NsdtError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| NsdtError::InvalidConfig(format!("unknown model `{s}` (expected nsdt, gnsdt, knn, dtree, rforest)")))
    }
}

/// Everything tunable for a run, loadable from a TOML file. Missing sections
/// take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub prepare: PrepareConfig,
    pub pipeline: PipelineConfig,
    pub baseline: BaselineConfig,
    /// Corruption applied by the robustness protocol.
    pub noise: NoiseConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }
}

/// Where rows come from: the published files, or a generated stand-in with the
/// same schema when those are not available and a proxy was allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Real,
    SyntheticProxy,
}

/// Rows generated for a proxy dataset when no subsample cap is given.
pub const PROXY_ROWS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub dataset: DatasetId,
    pub models: Vec<ModelKind>,
    pub config_path: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub repeats: usize,
    pub subsample: Option<usize>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub allow_proxy: bool,
    pub config: RunConfig,
}

impl ExperimentManifest {
    pub fn new(command: &str, dataset: DatasetId, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            command: command.to_string(),
            dataset,
            models: Vec::new(),
            config_path: None,
            seeds: vec![0],
            repeats: 1,
            subsample: None,
            data_dir: default_cache_dir(),
            out_dir: out_dir.into(),
            allow_proxy: false,
            config: RunConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.repeats == 0 {
            return Err(NsdtError::InvalidConfig("need at least one seed and one repeat".into()));
        }
        self.config.pipeline.train.validate()?;
        self.config.baseline.validate()
    }

    /// Output directory; a function of the manifest alone so reruns land in
    /// the same place and distinct runs never collide.
    pub fn run_dir(&self) -> PathBuf {
        let models = if self.models.is_empty() {
            "all".to_string()
        } else {
            self.models.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+")
        };
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join("_");
        let size = self.subsample.map_or_else(|| "full".to_string(), |n| n.to_string());
        let cfg = serde_json::to_string(&self.config).unwrap_or_default();
        let mut h = DefaultHasher::new();
        cfg.hash(&mut h);
        self.out_dir.join(format!(
            "{}-{}-{models}-s{seeds}-r{}-n{size}-{:08x}",
            self.command,
            self.dataset,
            self.repeats,
            h.finish() as u32
        ))
    }

    fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            subsample: self.subsample.or(self.config.prepare.subsample),
            ..self.config.prepare.clone()
        }
    }
}

/// Loads the raw table, falling back to a synthetic stand-in when allowed.
pub fn load_dataset(m: &ExperimentManifest) -> Result<(Table, DataSource)> {
    if sources_present(&m.data_dir, m.dataset) {
        return Ok((load_raw(&m.data_dir, m.dataset)?, DataSource::Real));
    }
    if !m.allow_proxy {
        let missing = source_files(m.dataset)
            .iter()
            .map(|f| m.data_dir.join(m.dataset.as_str()).join(f).display().to_string())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(NsdtError::MissingSource(format!(
            "{missing} (download from {}, or pass --proxy)",
            source_url(m.dataset)
        )));
    }
    let rows = m.subsample.unwrap_or(PROXY_ROWS);
    let seed = m.config.prepare.seed;
    Ok((synthetic_table(&SyntheticProfile::like(m.dataset), rows, seed), DataSource::SyntheticProxy))
}

// ---------------------------------------------------------------------------
// Output directories and failure records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub command: String,
    pub dataset: DatasetId,
    pub error: String,
    pub quarantine: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn with_suffix(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

/// Runs `body` inside a staging directory that replaces `dir` on success. On
/// failure the staging directory is moved to `<dir>.failed` with a
/// `failure.json` describing the error, and `dir` is left untouched.
pub fn run_guarded<T>(m: &ExperimentManifest, dir: &Path, body: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let staging = with_suffix(dir, ".partial");
    let failed = with_suffix(dir, ".failed");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    write_json(&staging.join("manifest.json"), m)?;
    match body(&staging) {
        Ok(v) => {
            if dir.exists() {
                fs::remove_dir_all(dir)?;
            }
            if failed.exists() {
                fs::remove_dir_all(&failed)?;
            }
            fs::rename(&staging, dir)?;
            Ok(v)
        }
        Err(e) => {
            if failed.exists() {
                fs::remove_dir_all(&failed)?;
            }
            fs::rename(&staging, &failed)?;
            let record = FailureRecord {
                command: m.command.clone(),
                dataset: m.dataset,
                error: e.to_string(),
                quarantine: failed.clone(),
            };
            write_json(&failed.join("failure.json"), &record)?;
            Err(e)
        }
    }
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub dataset: DatasetId,
    pub source: DataSource,
    pub rows: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub negatives: usize,
    pub positives: usize,
    /// negatives : positives
    pub class_ratio: f64,
    pub features: usize,
    pub numerical: usize,
    pub degenerate: Vec<String>,
    pub cleaning: CleaningReport,
}

impl PrepareReport {
    fn new(p: &Prepared, source: DataSource) -> Self {
        let e = &p.encoded;
        let positives = e.target.iter().filter(|&&t| t != 0).count();
        let negatives = e.n_rows() - positives;
        Self {
            dataset: p.dataset,
            source,
            rows: e.n_rows(),
            train: e.rows(SplitTag::Train).len(),
            valid: e.rows(SplitTag::Valid).len(),
            test: e.rows(SplitTag::Test).len(),
            negatives,
            positives,
            class_ratio: if positives == 0 { f64::INFINITY } else { negatives as f64 / positives as f64 },
            features: e.n_features(),
            numerical: e.numerical_features().len(),
            degenerate: e.degenerate.clone(),
            cleaning: p.cleaning.clone(),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "dataset {} ({:?})\nrows {} (train {}, valid {}, test {})\nclass balance {}:{} (ratio {:.2}:1)\nfeatures {} ({} numerical)\ncleaning: {} rows -> {} (missing {}, duplicates {}, conflicting {})\n",
            self.dataset,
            self.source,
            self.rows,
            self.train,
            self.valid,
            self.test,
            self.negatives,
            self.positives,
            self.class_ratio,
            self.features,
            self.numerical,
            self.cleaning.rows_before,
            self.cleaning.rows_after,
            self.cleaning.dropped_missing,
            self.cleaning.dropped_duplicates,
            self.cleaning.dropped_conflicting,
        )
    }
}

pub const ENCODED_FILE: &str = "encoded.nsdt";

fn prepared(m: &ExperimentManifest, noise: Option<NoiseConfig>) -> Result<(Prepared, DataSource)> {
    let (raw, source) = load_dataset(m)?;
    let cfg = PrepareConfig { noise, ..m.prepare_config() };
    Ok((prepare(&raw, m.dataset, &cfg)?, source))
}

fn save_encoded(data: &EncodedDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_encoded(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_encoded(path: &Path) -> Result<EncodedDataset> {
    read_encoded(BufReader::new(File::open(path)?))
}

/// Clean, split and encode a dataset; writes the encoded container and a
/// cleaning report.
pub fn cmd_prepare(m: &ExperimentManifest) -> Result<PrepareReport> {
    run_guarded(m, &m.run_dir(), |dir| {
        let (p, source) = prepared(m, m.config.prepare.noise.clone())?;
        save_encoded(&p.encoded, &dir.join(ENCODED_FILE))?;
        let report = PrepareReport::new(&p, source);
        write_json(&dir.join("prepare.json"), &report)?;
        fs::write(dir.join("prepare.txt"), report.render())?;
        Ok(report)
    })
}

/// Seed used for repeat `r` of seed `s`.
pub fn run_seed(seed: u64, repeat: usize) -> u64 {
    seed.wrapping_mul(1_000).wrapping_add(repeat as u64)
}

/// Trains one model kind once and returns its metrics (and the run when neural).
fn fit_once(kind: ModelKind, data: &EncodedDataset, cfg: &RunConfig, seed: u64) -> Result<(BTreeMap<String, f64>, Option<NeuralRun>)> {
    let mut metrics = BTreeMap::new();
    if let Some(variant) = kind.variant() {
        let run = fit_neural(data, variant, &cfg.pipeline.with_seed(seed))?;
        metrics.insert("test_balanced_accuracy".into(), run.test_balanced_accuracy);
        metrics.insert("tree_balanced_accuracy".into(), run.tree_test_balanced_accuracy);
        metrics.insert("best_epoch".into(), run.history.best_epoch as f64);
        if let Some(v) = numerical_validity(&run.model)? {
            metrics.insert("numerical_validity".into(), v);
        }
        Ok((metrics, Some(run)))
    } else {
        let kind = kind.baseline().expect("baseline kind");
        let bcfg = BaselineConfig { seed, ..cfg.baseline.clone() };
        let r = fit_predict_baseline(kind, &bcfg, data, &data.rows(SplitTag::Train), &data.rows(SplitTag::Test))?;
        metrics.insert("test_balanced_accuracy".into(), r.balanced_accuracy);
        Ok((metrics, None))
    }
}

fn checkpoint_meta(m: &ExperimentManifest, data: &EncodedDataset, kind: ModelKind, seed: u64, repeat: usize, source: DataSource) -> serde_json::Value {
    serde_json::json!({
        "dataset": m.dataset,
        "model": kind,
        "seed": seed,
        "repeat": repeat,
        "source": source,
        "mappings": data.mappings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: ModelKind,
    pub runs: SeededSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: DatasetId,
    pub source: DataSource,
    pub results: Vec<ModelResult>,
    pub table: Vec<ComparisonRow>,
}

fn mean_of(s: &SeededSummary, key: &str) -> Option<(f64, f64)> {
    s.summary.get(key).map(|x| (x.mean, x.std))
}

/// Trains each requested model over seeds x repeats; neural runs leave a
/// checkpoint per run. Writes `results.json` and a comparison table.
pub fn cmd_train(m: &ExperimentManifest) -> Result<TrainReport> {
    m.validate()?;
    let refs = ReferenceValues::bundled()?;
    let models = if m.models.is_empty() { ModelKind::ALL.to_vec() } else { m.models.clone() };
    run_guarded(m, &m.run_dir(), |dir| {
        let (p, source) = prepared(m, None)?;
        let data = &p.encoded;
        save_encoded(data, &dir.join(ENCODED_FILE))?;
        let mut results = Vec::new();
        let mut table = Vec::new();
        for &kind in &models {
            let runs = run_seeded(&m.seeds, m.repeats, |seed, repeat| {
                let s = run_seed(seed, repeat);
                log::info!("{} {} seed {seed} repeat {repeat}", m.dataset, kind);
                let (metrics, run) = fit_once(kind, data, &m.config, s)?;
                if let Some(run) = run {
                    let sub = dir.join(kind.as_str()).join(format!("seed{seed}-rep{repeat}"));
                    fs::create_dir_all(&sub)?;
                    save_checkpoint(&run.model, checkpoint_meta(m, data, kind, seed, repeat, source), &sub.join(CHECKPOINT_FILE))?;
                    write_json(&sub.join("history.json"), &run.history)?;
                }
                Ok(metrics)
            })?;
            let (mean, std) = mean_of(&runs, "test_balanced_accuracy").unwrap_or((f64::NAN, f64::NAN));
            table.push(compare(
                format!("{}/{}", m.dataset, kind),
                mean,
                Some(std),
                refs.performance(m.dataset, kind.as_str()),
                refs.tolerance.balanced_accuracy,
            ));
            if kind.variant().is_some() {
                if let Some((t, ts)) = mean_of(&runs, "tree_balanced_accuracy") {
                    table.push(compare(format!("{}/{}/pretrained_tree", m.dataset, kind), t, Some(ts), None, 0.0));
                }
            }
            results.push(ModelResult { model: kind, runs });
        }
        for reference_only in ["snn", "autoint", "ft_transformer"] {
            if let Some(r) = refs.performance(m.dataset, reference_only) {
                table.push(ComparisonRow {
                    metric: format!("{}/{reference_only} (reference only)", m.dataset),
                    measured: None,
                    std: None,
                    reference: Some(r),
                    tolerance: None,
                    verdict: Verdict::NoReference,
                });
            }
        }
        let report = TrainReport { dataset: m.dataset, source, results, table };
        write_json(&dir.join("results.json"), &report)?;
        write_json(&dir.join(TABLE_FILE), &report.table)?;
        fs::write(dir.join("table.txt"), render_comparison(&title(m, source, "test balanced accuracy"), &report.table))?;
        Ok(report)
    })
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TABLE_FILE: &str = "table.json";

fn title(m: &ExperimentManifest, source: DataSource, what: &str) -> String {
    let tag = match source {
        DataSource::Real => "",
        DataSource::SyntheticProxy => " [synthetic proxy data]",
    };
    format!("{} {}: {what}{tag}", m.command, m.dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub valid_balanced_accuracy: f64,
    pub test_balanced_accuracy: f64,
    pub numerical_validity: Option<f64>,
    pub categorical_validity: Option<f64>,
}

/// The encoded container written next to a training run's checkpoints.
pub fn default_encoded_for(checkpoint: &Path) -> PathBuf {
    checkpoint
        .ancestors()
        .skip(1)
        .map(|d| d.join(ENCODED_FILE))
        .find(|p| p.is_file())
        .unwrap_or_else(|| PathBuf::from(ENCODED_FILE))
}

/// Scores a saved model on the valid and test splits of an encoded dataset.
pub fn cmd_eval(checkpoint: &Path, encoded: &Path) -> Result<EvalReport> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let data = load_encoded(encoded)?;
    if data.features != model.features {
        return Err(NsdtError::Format("checkpoint and dataset features differ".into()));
    }
    let score = |tag| -> Result<f64> {
        let rows = data.rows(tag);
        let (_, pred) = model.predict(data.codes.view(), &rows)?;
        Ok(balanced_accuracy(&split_truth(&data, &rows), &pred))
    };
    let v = validity_report(&model, DEFAULT_MEMBERSHIP_CUT)?;
    Ok(EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        valid_balanced_accuracy: score(SplitTag::Valid)?,
        test_balanced_accuracy: score(SplitTag::Test)?,
        numerical_validity: v.numerical_validity,
        categorical_validity: v.categorical_validity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPair {
    pub seed: u64,
    pub repeat: usize,
    pub all_regs: f64,
    pub no_reg: f64,
    pub delta: f64,
    /// Both arms saw identical batches for every epoch they share.
    pub batches_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: DatasetId,
    pub source: DataSource,
    pub model: ModelKind,
    pub pairs: Vec<AblationPair>,
    pub mean_delta: f64,
    pub table: Vec<ComparisonRow>,
}

/// All-regularizer vs no-regularizer arms under shared seeds, reported as
/// paired deltas.
pub fn cmd_ablate(m: &ExperimentManifest) -> Result<AblationReport> {
    m.validate()?;
    let refs = ReferenceValues::bundled()?;
    let model = m.models.first().copied().unwrap_or(ModelKind::Gnsdt);
    let variant = model
        .variant()
        .ok_or_else(|| NsdtError::InvalidConfig(format!("ablation needs nsdt or gnsdt, got {model}")))?;
    run_guarded(m, &m.run_dir(), |dir| {
        let (p, source) = prepared(m, None)?;
        let data = &p.encoded;
        let mut pairs = Vec::new();
        for &seed in &m.seeds {
            for repeat in 0..m.repeats {
                let cfg = m.config.pipeline.with_seed(run_seed(seed, repeat));
                let mut off = cfg.clone();
                off.train.regularizer.enabled = EnabledLosses::NONE;
                let on_run = fit_neural(data, variant, &cfg)?;
                let off_run = fit_neural(data, variant, &off)?;
                let batches_match = on_run
                    .history
                    .epochs
                    .iter()
                    .zip(&off_run.history.epochs)
                    .all(|(a, b)| a.batch_hash == b.batch_hash);
                pairs.push(AblationPair {
                    seed,
                    repeat,
                    all_regs: on_run.test_balanced_accuracy,
                    no_reg: off_run.test_balanced_accuracy,
                    delta: on_run.test_balanced_accuracy - off_run.test_balanced_accuracy,
                    batches_match,
                });
            }
        }
        let on = summarize(&pairs.iter().map(|p| p.all_regs).collect::<Vec<_>>());
        let off = summarize(&pairs.iter().map(|p| p.no_reg).collect::<Vec<_>>());
        let delta = summarize(&pairs.iter().map(|p| p.delta).collect::<Vec<_>>());
        let r = refs.ablation.get(m.dataset.as_str());
        let tol = refs.tolerance.balanced_accuracy;
        let table = vec![
            compare(format!("{}/{model}/all_regs", m.dataset), on.mean, Some(on.std), r.map(|r| r.all_regs), tol),
            compare(format!("{}/{model}/no_reg", m.dataset), off.mean, Some(off.std), r.map(|r| r.no_reg), tol),
            compare(format!("{}/{model}/delta", m.dataset), delta.mean, Some(delta.std), r.map(|r| r.all_regs - r.no_reg), tol),
        ];
        let report = AblationReport { dataset: m.dataset, source, model, pairs, mean_delta: delta.mean, table };
        write_json(&dir.join("results.json"), &report)?;
        write_json(&dir.join(TABLE_FILE), &report.table)?;
        fs::write(dir.join("table.txt"), render_comparison(&title(m, source, "regularizer ablation"), &report.table))?;
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub model: ModelKind,
    pub before: f64,
    pub after: f64,
    /// Relative drop in percent.
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub dataset: DatasetId,
    pub source: DataSource,
    pub rows: Vec<RobustnessRow>,
    pub noise: Option<NoiseReport>,
    pub associations: Vec<AssociationDrop>,
    /// Every corrupted feature lost association with the target.
    pub association_decreased: bool,
    pub table: Vec<ComparisonRow>,
}

pub const ROBUSTNESS_MODELS: [ModelKind; 4] = [ModelKind::Gnsdt, ModelKind::Knn, ModelKind::Dtree, ModelKind::Rforest];

/// Trains every model on clean and on corrupted copies of the same rows and
/// split, and reports the relative drop. A zero `feature_fraction` skips
/// corruption (a noiseless control).
pub fn cmd_robustness(m: &ExperimentManifest) -> Result<RobustnessReport> {
    m.validate()?;
    let refs = ReferenceValues::bundled()?;
    let models = if m.models.is_empty() { ROBUSTNESS_MODELS.to_vec() } else { m.models.clone() };
    run_guarded(m, &m.run_dir(), |dir| {
        let (clean, source) = prepared(m, None)?;
        let noise = (m.config.noise.feature_fraction > 0.0).then(|| m.config.noise.clone());
        let (noisy, _) = prepared(m, noise)?;
        if clean.encoded.split != noisy.encoded.split {
            return Err(NsdtError::ContractViolation("clean and noisy splits differ".into()));
        }
        let corrupted = noisy.noise.as_ref().map(NoiseReport::corrupted_indices).unwrap_or_default();
        let associations = correlation_drop_check(&clean.raw, &noisy.raw, &clean.labels, &corrupted)?;
        let association_decreased = associations.iter().all(|a| a.excluded || a.decreased());
        let mut rows = Vec::new();
        let mut table = Vec::new();
        let tol = refs.tolerance.balanced_accuracy;
        for &kind in &models {
            let mut before = Vec::new();
            let mut after = Vec::new();
            for &seed in &m.seeds {
                for repeat in 0..m.repeats {
                    let s = run_seed(seed, repeat);
                    before.push(fit_once(kind, &clean.encoded, &m.config, s)?.0["test_balanced_accuracy"]);
                    after.push(fit_once(kind, &noisy.encoded, &m.config, s)?.0["test_balanced_accuracy"]);
                }
            }
            let (b, a) = (summarize(&before), summarize(&after));
            let drop = robustness_drop(b.mean, a.mean);
            let r = refs.robustness(m.dataset, kind.as_str());
            let name = format!("{}/{kind}", m.dataset);
            table.push(compare(format!("{name}/before"), b.mean, Some(b.std), r.map(|r| r.before), tol));
            table.push(compare(format!("{name}/after"), a.mean, Some(a.std), r.map(|r| r.after), tol));
            table.push(compare(format!("{name}/drop%"), drop, None, r.map(|r| r.drop), refs.tolerance.drop_percent));
            rows.push(RobustnessRow { model: kind, before: b.mean, after: a.mean, drop });
        }
        let report = RobustnessReport {
            dataset: m.dataset,
            source,
            rows,
            noise: noisy.noise,
            associations,
            association_decreased,
            table,
        };
        write_json(&dir.join("results.json"), &report)?;
        write_json(&dir.join(TABLE_FILE), &report.table)?;
        let mut text = render_comparison(&title(m, source, "noise robustness"), &report.table);
        text.push_str("\nassociation with target (corrupted features)\n");
        for a in &report.associations {
            text.push_str(&format!(
                "{:<24} {:<10} before {:>8} after {:>8} {}\n",
                a.name,
                a.measure,
                opt(a.before, 4),
                opt(a.after, 4),
                if a.excluded { "excluded" } else if a.decreased() { "decreased" } else { "NOT decreased" }
            ));
        }
        fs::write(dir.join("table.txt"), text)?;
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub validity: ValidityReport,
    pub rules: Vec<DecodedRule>,
    pub response_tables: Vec<ResponseTable>,
    pub table: Vec<ComparisonRow>,
}

/// Validity report, decoded rules and operator response tables for a saved
/// model, written to `out`.
pub fn cmd_explain(checkpoint: &Path, redact: &[String], out: &Path) -> Result<ExplainReport> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    let mappings: Vec<Option<BinMapping>> = meta
        .get("mappings")
        .map(|v| serde_json::from_value(v.clone()))
        .transpose()?
        .unwrap_or_else(|| vec![None; model.features.len()]);
    let dataset: Option<DatasetId> = meta.get("dataset").and_then(|v| serde_json::from_value(v.clone()).ok());
    let validity = validity_report(&model, DEFAULT_MEMBERSHIP_CUT)?;
    let rules = extract_rules_report(&model, &mappings, redact, DEFAULT_MEMBERSHIP_CUT)?;
    let mut response_tables = Vec::new();
    for k in 0..model.n_thresholds() {
        let f = model.thresholds[k].feature;
        if redact.iter().any(|r| r == &model.features[f].name) {
            continue;
        }
        let h = model.features[f].cardinality();
        response_tables.push(operator_response_table(&model, k, &even_probes(h, 11))?);
    }
    let refs = ReferenceValues::bundled()?;
    let vref = dataset.and_then(|d| refs.validity.get(d.as_str()));
    let tol = refs.tolerance.validity_percent;
    let mut table = Vec::new();
    if let Some(v) = validity.numerical_validity {
        table.push(compare("numerical_validity%", v, None, vref.and_then(|r| r.numerical), tol));
    }
    if let Some(v) = validity.monotone_share {
        table.push(compare("strictly_monotone%", v, None, None, tol));
    }
    if let Some(v) = validity.categorical_validity {
        table.push(compare("categorical_validity%", v, None, vref.and_then(|r| r.categorical), tol));
    }
    fs::create_dir_all(out)?;
    let report = ExplainReport { validity, rules, response_tables, table };
    write_json(&out.join("explain.json"), &report)?;
    write_json(&out.join(TABLE_FILE), &report.table)?;
    let mut text = render_comparison("explain: threshold validity", &report.table);
    text.push('\n');
    text.push_str(&render_validity(&report.validity));
    fs::write(out.join("validity.txt"), text)?;
    fs::write(out.join("rules.txt"), render_rules(&report.rules))?;
    let tables: Vec<String> = report.response_tables.iter().map(render_response_table).collect();
    fs::write(out.join("response_tables.txt"), tables.join("\n"))?;
    Ok(report)
}

/// Collects every `table.json` under `out_dir` into one report.
pub fn cmd_report(out_dir: &Path) -> Result<String> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(TABLE_FILE).is_file())
        .collect();
    dirs.sort();
    let mut text = String::new();
    let mut all = BTreeMap::new();
    for d in dirs {
        let rows: Vec<ComparisonRow> = serde_json::from_str(&fs::read_to_string(d.join(TABLE_FILE))?)?;
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        text.push_str(&render_comparison(&name, &rows));
        text.push('\n');
        all.insert(name, rows);
    }
    write_json(&out_dir.join("report.json"), &all)?;
    fs::write(out_dir.join("report.txt"), &text)?;
    Ok(text)
}
