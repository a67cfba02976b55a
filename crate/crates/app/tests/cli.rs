mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{fixture, spawn_stub};

fn depsev(out: &Path, endpoint: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_depsev"));
    cmd.arg("--config")
        .arg(fixture("config.toml"))
        .arg("--out")
        .arg(out)
        .args(args);
    match endpoint {
        Some(url) => cmd.env("ZEROSHOT_ENDPOINT", url),
        None => cmd.env_remove("ZEROSHOT_ENDPOINT"),
    };
    cmd.output().expect("run depsev")
}

/// Log lines may precede the structured error on stderr.
fn last_json(stderr: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(stderr);
    serde_json::from_str(text.lines().last().expect("stderr output")).unwrap()
}

fn ok(output: Output) -> String {
    assert!(
        output.status.success(),
        "status {:?}\n{}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

#[test]
fn staged_commands_match_a_full_run() {
    let stub = spawn_stub();
    let url = stub.url();
    let dir = tempfile::tempdir().unwrap();
    let staged = dir.path().join("staged");
    let full = dir.path().join("full");

    for stage in [
        "ingest",
        "lexicon",
        "label-keyword",
        "label-zeroshot",
        "annotate-import",
        "fuse",
        "split",
        "smote",
        "train",
        "evaluate",
    ] {
        ok(depsev(&staged, Some(&url), &[stage]));
    }
    ok(depsev(&full, Some(&url), &["run"]));

    for part in ["validation", "test"] {
        for format in ["text", "machine"] {
            let args = ["report", "--part", part, "--format", format];
            let a = ok(depsev(&staged, None, &args));
            let b = ok(depsev(&full, None, &args));
            assert!(!a.is_empty());
            assert_eq!(a, b, "{part} {format}");
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(full.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["languages"]["en"]["documents"], 200);
}

#[test]
fn seed_override_is_recorded() {
    let stub = spawn_stub();
    let dir = tempfile::tempdir().unwrap();
    ok(depsev(
        dir.path(),
        Some(&stub.url()),
        &["--seed", "7", "run"],
    ));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn pending_labels_exit_with_structured_error() {
    let stub = spawn_stub();
    let dir = tempfile::tempdir().unwrap();
    let csv = fs::read_to_string(fixture("expert_labels.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let partial = dir.path().join("partial.csv");
    fs::write(&partial, lines[..lines.len() - 5].join("\n") + "\n").unwrap();

    let out = dir.path().join("out");
    let url = stub.url();
    for stage in ["ingest", "lexicon", "label-keyword", "label-zeroshot"] {
        ok(depsev(&out, Some(&url), &[stage]));
    }
    ok(depsev(
        &out,
        None,
        &["annotate-import", "--file", partial.to_str().unwrap()],
    ));
    let output = depsev(&out, None, &["fuse"]);
    assert_eq!(output.status.code(), Some(2));
    let err: serde_json::Value = last_json(&output.stderr);
    assert_eq!(err["error"]["stage"], "fuse");
    assert_eq!(err["error"]["kind"], "pending");
    assert_eq!(err["error"]["message"], "pending: 5");
}

#[test]
fn stage_without_inputs_names_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let output = depsev(dir.path(), None, &["split"]);
    assert_eq!(output.status.code(), Some(2));
    let err: serde_json::Value = last_json(&output.stderr);
    assert_eq!(err["error"]["kind"], "missing_input");
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "corpus = \"missing.jsonl\"\nseed = 1\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_depsev"))
        .arg("--config")
        .arg(&config)
        .arg("ingest")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err: serde_json::Value = last_json(&output.stderr);
    assert_eq!(err["error"]["stage"], "config");
}

#[test]
fn report_validate_flags_inconsistent_rows() {
    let table =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/reference_tables.csv");
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(depsev(
        dir.path(),
        None,
        &[
            "report",
            "--validate",
            table.to_str().unwrap(),
            "--tolerance",
            "0.02",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["rows"], 40);
    assert_eq!(v["consistent"], 37);
    let flagged = v["flagged"].as_array().unwrap();
    assert!(flagged
        .iter()
        .any(|f| f["language"] == "en" && f["class"] == "normal" && f["model"] == "SVM"));

    let output = depsev(
        dir.path(),
        None,
        &[
            "report",
            "--validate",
            table.to_str().unwrap(),
            "--tolerance=-1",
        ],
    );
    assert_eq!(output.status.code(), Some(1));
}
