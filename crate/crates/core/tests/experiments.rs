use std::fs;
use std::path::Path;

use nsdt_core::data::DatasetId;
use nsdt_core::experiments::*;
use nsdt_core::metrics::robustness_drop;
use nsdt_core::NsdtError;

fn manifest(command: &str, dataset: DatasetId, out: &Path) -> ExperimentManifest {
    let mut m = ExperimentManifest::new(command, dataset, out);
    m.data_dir = out.join("no-data");
    m.allow_proxy = true;
    m.subsample = Some(2000);
    m.config.pipeline.train.max_epochs = 2;
    m.config.pipeline.train.warmup_steps = 10;
    m.config.pipeline.model.dim = 8;
    m.config.pipeline.model.hidden = vec![16];
    m.config.baseline.forest_trees = 10;
    m
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn bundled_reference_values() {
    let r = ReferenceValues::bundled().unwrap();
    assert_eq!(r.performance(DatasetId::Census, "gnsdt"), Some(0.861));
    assert_eq!(r.performance(DatasetId::Credit, "dtree"), Some(0.755));
    let g = r.robustness(DatasetId::Higgs, "gnsdt").unwrap();
    assert!((robustness_drop(g.before, g.after) - g.drop).abs() < 0.01);
    let a = &r.ablation["higgs"];
    assert!(a.all_regs > a.no_reg);
}

#[test]
fn comparison_verdicts() {
    assert_eq!(compare("x", 0.85, None, Some(0.861), 0.015).verdict, Verdict::Within);
    assert_eq!(compare("x", 0.80, None, Some(0.861), 0.015).verdict, Verdict::Outside);
    assert_eq!(compare("x", 0.80, None, None, 0.015).verdict, Verdict::NoReference);
}

#[test]
fn model_kind_parses() {
    for k in ModelKind::ALL {
        assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
    }
    assert!("xgboost".parse::<ModelKind>().is_err());
}

#[test]
fn run_config_reads_partial_toml() {
    let c = RunConfig::from_toml_str("[pipeline.train]\nmax_epochs = 7\n[baseline]\nk = 3\n").unwrap();
    assert_eq!(c.pipeline.train.max_epochs, 7);
    assert_eq!(c.baseline.k, 3);
    assert_eq!(c.pipeline.tree_depth, 6);
}

#[test]
fn prepare_splits_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest("prepare", DatasetId::Higgs, tmp.path());
    let r = cmd_prepare(&m).unwrap();
    assert_eq!((r.rows, r.train, r.valid, r.test), (2000, 1400, 200, 400));
    assert_eq!(r.source, DataSource::SyntheticProxy);
    let first = read_dir_bytes(&m.run_dir());
    cmd_prepare(&m).unwrap();
    assert_eq!(first, read_dir_bytes(&m.run_dir()));
}

#[test]
fn insurance_proxy_is_roughly_nine_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    let r = cmd_prepare(&manifest("prepare", DatasetId::Insurance, tmp.path())).unwrap();
    assert!((6.0..13.0).contains(&r.class_ratio), "{}", r.class_ratio);
}

#[test]
fn missing_sources_leave_a_failure_record() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = manifest("prepare", DatasetId::Credit, tmp.path());
    m.allow_proxy = false;
    let err = cmd_prepare(&m).unwrap_err();
    assert!(matches!(err, NsdtError::MissingSource(_)));
    let dir = m.run_dir();
    assert!(!dir.exists());
    let failed = dir.with_file_name(format!("{}.failed", dir.file_name().unwrap().to_string_lossy()));
    let record: FailureRecord = serde_json::from_str(&fs::read_to_string(failed.join("failure.json")).unwrap()).unwrap();
    assert_eq!(record.command, "prepare");
    assert!(failed.join("manifest.json").is_file());
}

#[test]
fn distinct_manifests_get_distinct_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let a = manifest("train", DatasetId::Census, tmp.path());
    let mut b = a.clone();
    b.seeds = vec![1];
    let mut c = a.clone();
    c.config.pipeline.train.learning_rate = 0.5;
    assert_ne!(a.run_dir(), b.run_dir());
    assert_ne!(a.run_dir(), c.run_dir());
    assert_eq!(a.run_dir(), a.clone().run_dir());
}

#[test]
fn train_eval_explain_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = manifest("train", DatasetId::Census, tmp.path());
    m.models = vec![ModelKind::Dtree, ModelKind::Nsdt];
    let report = cmd_train(&m).unwrap();
    assert_eq!(report.results.len(), 2);
    let dtree_row = report.table.iter().find(|r| r.metric == "census/dtree").unwrap();
    assert_eq!(dtree_row.reference, Some(0.832));
    assert_ne!(dtree_row.verdict, Verdict::NoReference);

    let ckpt = m.run_dir().join("nsdt").join("seed0-rep0").join(CHECKPOINT_FILE);
    let enc = default_encoded_for(&ckpt);
    assert_eq!(enc, m.run_dir().join(ENCODED_FILE));
    let e1 = cmd_eval(&ckpt, &enc).unwrap();
    let e2 = cmd_eval(&ckpt, &enc).unwrap();
    assert_eq!(e1, e2);
    let nsdt = report.results.iter().find(|r| r.model == ModelKind::Nsdt).unwrap();
    assert_eq!(e1.test_balanced_accuracy, nsdt.runs.runs[0].metrics["test_balanced_accuracy"]);

    let explain_dir = tmp.path().join("explain");
    let full = cmd_explain(&ckpt, &[], &explain_dir).unwrap();
    let used: Vec<String> = full.rules.iter().flat_map(|r| r.conditions.iter().map(|c| c.feature.clone())).collect();
    let victim = used.first().cloned().expect("rules mention a feature");
    let redacted = cmd_explain(&ckpt, std::slice::from_ref(&victim), &explain_dir).unwrap();
    assert!(redacted.rules.iter().all(|r| r.conditions.iter().all(|c| c.feature != victim)));
    let text = fs::read_to_string(explain_dir.join("rules.txt")).unwrap();
    assert!(!text.contains(&format!("({victim} ")));
    assert!(explain_dir.join("response_tables.txt").is_file());

    let report = cmd_report(tmp.path()).unwrap();
    assert!(report.contains("census/dtree"));
    assert!(tmp.path().join("report.json").is_file());
}

#[test]
fn noiseless_control_has_zero_drop() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = manifest("robustness", DatasetId::Higgs, tmp.path());
    m.models = vec![ModelKind::Dtree, ModelKind::Knn];
    m.config.noise.feature_fraction = 0.0;
    let r = cmd_robustness(&m).unwrap();
    assert!(r.noise.is_none());
    for row in &r.rows {
        assert_eq!(row.drop, 0.0, "{:?}", row.model);
    }
}

#[test]
fn noisy_robustness_reports_associations() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = manifest("robustness", DatasetId::Higgs, tmp.path());
    m.models = vec![ModelKind::Dtree];
    let r = cmd_robustness(&m).unwrap();
    let corrupted = r.noise.as_ref().unwrap().features.len();
    assert_eq!(r.associations.len(), corrupted);
    assert!(corrupted > 0);
    assert!(fs::read_to_string(m.run_dir().join("table.txt")).unwrap().contains("drop%"));
}

#[test]
fn ablation_arms_share_batches() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = manifest("ablate", DatasetId::Credit, tmp.path());
    m.models = vec![ModelKind::Nsdt];
    let r = cmd_ablate(&m).unwrap();
    assert_eq!(r.pairs.len(), 1);
    assert!(r.pairs.iter().all(|p| p.batches_match));
    assert_eq!(r.table.len(), 3);
}
