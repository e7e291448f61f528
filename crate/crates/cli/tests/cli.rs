//! Runs the binary end to end on a small generated corpus.

use std::path::Path;
use std::process::{Command, Output};

fn iotid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iotid")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn generate_ingest_train_eval_bench_explain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&iotid(&["generate", "--out", "corpus", "--setups", "4", "--seed", "1"], d));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("corpus/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 32);

    let counts = ok(&iotid(&["ingest", "--manifest", "corpus/manifest.json", "--cache", "s.cache", "--out", "o"], d));
    assert!(counts.contains("AcmeCamera"));
    assert!(d.join("o/ingest_run.json").exists());

    std::fs::write(d.join("run.conf"), "manifest = corpus/manifest.json\nout = o\nepochs = 1\nseed = 2\n").unwrap();
    for model in ["cnn", "lstm", "baseline"] {
        ok(&iotid(&["train", "--config", "run.conf", "--model", model, "--cache", "s.cache"], d));
        let metrics = ok(&iotid(&["eval", "--config", "run.conf", "--model", model, "--cache", "s.cache"], d));
        assert!(metrics.contains("macro_precision"));
    }
    assert!(d.join("o/cnn_session_confusion_normalized.csv").exists());
    let bench = ok(&iotid(&["bench", "--config", "run.conf", "--cache", "s.cache", "--repetitions", "1"], d));
    for method in ["cnn", "lstm", "baseline"] {
        assert!(bench.contains(method), "{bench}");
    }
    ok(&iotid(&["explain", "--config", "run.conf", "--cache", "s.cache", "--samples", "2", "--draws", "4"], d));
    assert_eq!(std::fs::read_to_string(d.join("o/cnn_byte_importance.csv")).unwrap().lines().count(), 785);
}

#[test]
fn missing_checkpoint_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = iotid(&["eval", "--checkpoint", "absent/model.iotm", "--cache", "x.cache"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent/model.iotm"));
    let bad = iotid(&["train", "--model", "svm"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}
