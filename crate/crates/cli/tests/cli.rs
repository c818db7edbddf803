use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn codeback(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codeback"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{
  "corpus": {"source": {"kind": "synthetic", "train": 60, "test": 15}},
  "model": {"embed_dim": 8, "hidden_dim": 8, "epochs": 1, "batch_size": 16},
  "detector": {"k": 2, "k_sweep": [1, 2]}
}"#,
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn run_all_then_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let run = codeback(&["--config", &cfg, "--out", out, "--epsilon", "0.1", "run-all"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(out).join("eval.json")).unwrap()).unwrap();
    for key in ["test_f1", "bd_rate", "post_test_f1", "post_bd_rate", "detector_recall"] {
        assert!(eval.get(key).is_some(), "{key} missing");
    }
    let sweep = codeback(&["--config", &cfg, "--out", out, "--epsilon", "0.1", "k-sweep"]);
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    let text = fs::read_to_string(Path::new(out).join("ksweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = codeback(&[
        "--config", &cfg, "--seed", "7", "--k", "4", "--trigger", "grammatical", "--target",
        "dynamic", "--repr", "context-vectors", "--synthetic", "30,10", "show-config",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 7);
    assert_eq!(v["detector"]["k"], 4);
    assert_eq!(v["detector"]["representation"], "context_vectors");
    assert_eq!(v["backdoor"]["trigger_kind"], "grammatical");
    assert_eq!(v["backdoor"]["target_kind"], "dynamic");
    assert_eq!(v["corpus"]["source"]["train"], 30);
    assert_eq!(v["model"]["hidden_dim"], 8);
}

#[test]
fn missing_upstream_artifact_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let run = codeback(&["--out", out.to_str().unwrap(), "train"]);
    assert!(!run.status.success());
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("missing"), "{err}");
}

#[test]
fn invalid_epsilon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let run = codeback(&["--out", out.to_str().unwrap(), "--epsilon", "0.7", "gen-corpus"]);
    assert!(!run.status.success());
}
