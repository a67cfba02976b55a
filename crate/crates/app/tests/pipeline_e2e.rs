mod common;

use std::fs;

use depsev::pipeline::Stage;
use depsev::{run_pipeline, Pipeline};
use depsev_core::evaluation::ReportFormat;
use depsev_core::CoarseLabel;

use common::{fixture_config, spawn_stub};

#[test]
fn fixture_run_writes_every_artifact() {
    let stub = spawn_stub();
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture_config(dir.path());
    config.zeroshot.endpoint = Some(stub.url());
    let pipeline = Pipeline::new(&config);
    let manifest = run_pipeline(&pipeline).unwrap();

    let en = &manifest.languages["en"];
    assert_eq!(en.documents, 200);
    assert_eq!(en.agreement.values().sum::<usize>(), 200);
    assert!(en.agreement["expert_fallback"] >= 10, "{:?}", en.agreement);
    for (class, total) in [
        (CoarseLabel::Normal, 60),
        (CoarseLabel::Mild, 50),
        (CoarseLabel::Moderate, 50),
        (CoarseLabel::Severe, 40),
    ] {
        assert_eq!(en.split["test"][&class], 10);
        assert_eq!(en.split["validation"][&class], 8);
        assert_eq!(en.split["train"][&class], total - 18);
        assert_eq!(en.smote[&class], 42, "oversampled up to the largest class");
    }
    assert_eq!(en.models.len(), 4);
    for m in &en.models {
        assert!(m.train_accuracy >= 0.9, "{:?}", m);
    }
    assert_eq!(manifest.config_hash, config.hash());
    assert!(manifest.blind_mode);

    let layout = &pipeline.layout;
    for path in [
        layout.clean("en"),
        layout.lexicon("en"),
        layout.fused("en"),
        layout.tfidf("en"),
        layout.smote("en"),
        layout.dataset("en").join("manifest.json"),
        layout.report("en", "test", ReportFormat::Text),
        layout.report("en", "validation", ReportFormat::Machine),
        layout.manifest(),
    ] {
        assert!(path.exists(), "{}", path.display());
    }
    let machine = fs::read_to_string(layout.report("en", "test", ReportFormat::Machine)).unwrap();
    // Four class records plus a summary per model.
    assert_eq!(machine.lines().count(), 4 * 5);
}

#[test]
fn rerun_is_byte_identical_and_uses_the_cache() {
    let stub = spawn_stub();
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture_config(dir.path());
    config.zeroshot.endpoint = Some(stub.url());
    let pipeline = Pipeline::new(&config);
    run_pipeline(&pipeline).unwrap();
    let calls = stub.calls();
    assert_eq!(calls, 200);
    let first = fs::read(pipeline.layout.report("en", "test", ReportFormat::Machine)).unwrap();
    let first_manifest = fs::read(pipeline.layout.manifest()).unwrap();
    run_pipeline(&pipeline).unwrap();
    assert_eq!(stub.calls(), calls, "second run is served from the cache");
    assert_eq!(
        first,
        fs::read(pipeline.layout.report("en", "test", ReportFormat::Machine)).unwrap()
    );
    assert_eq!(
        first_manifest,
        fs::read(pipeline.layout.manifest()).unwrap()
    );
}

#[test]
fn missing_expert_labels_stop_at_fusion() {
    let stub = spawn_stub();
    let dir = tempfile::tempdir().unwrap();
    let csv = fs::read_to_string(common::fixture("expert_labels.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let partial = dir.path().join("partial.csv");
    fs::write(&partial, lines[..lines.len() - 5].join("\n") + "\n").unwrap();

    let mut config = fixture_config(&dir.path().join("out"));
    config.zeroshot.endpoint = Some(stub.url());
    config.expert_labels = Some(partial);
    let err = run_pipeline(&Pipeline::new(&config)).unwrap_err();
    assert_eq!(err.stage, Stage::Fuse);
    assert_eq!(err.kind, "pending");
    assert_eq!(err.message, "pending: 5");
}

#[test]
fn unreachable_zeroshot_service_names_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture_config(dir.path());
    config.zeroshot.endpoint = Some("http://127.0.0.1:9/classify".into());
    config.zeroshot.retry.max_attempts = 1;
    let err = run_pipeline(&Pipeline::new(&config)).unwrap_err();
    assert_eq!(err.stage, Stage::Zeroshot);
    let json: serde_json::Value = serde_json::from_str(&err.to_json()).unwrap();
    assert_eq!(json["error"]["stage"], "zeroshot");
}

#[test]
fn config_hash_follows_config_changes() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path());
    let mut changed = config.clone();
    changed.seed += 1;
    assert_ne!(config.hash(), changed.hash());
    let mut changed = config.clone();
    changed.blind_mode = false;
    assert_ne!(config.hash(), changed.hash());
    let mut changed = config.clone();
    changed.models[0]
        .hyperparameters
        .insert("alpha".into(), 0.5);
    assert_ne!(config.hash(), changed.hash());
    assert_eq!(config.hash(), config.clone().hash());
}
