use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use zsl_core::data::{load_dataset, read_semantic_matrix, DatasetPaths, Partition};
use zsl_core::gzsl::suc_curve;
use zsl_core::pipeline::{gzsl_scores, train_method, Hypers, Method, TrainInput};

fn zsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zsl")).args(args).output().expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 1, "one summary line expected, got {text:?}");
    serde_json::from_str(text.trim()).expect("summary is JSON")
}

/// Synthetic fixture in a fresh temp dir; returns (guard, config path, out dir).
fn fixture(seed: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = zsl(&["synth-data", "--out", data.to_str().unwrap(), "--seed", seed]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    (dir, data.join("config.json"), run)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_config_error_naming_flag() {
    let out = zsl(&["eval-zsl", "--config", "x.json", "--out", "o", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));
}

#[test]
fn missing_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("absent.json");
    let out = zsl(&["eval-zsl", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_field_exits_one() {
    let (_g, cfg, run) = fixture("2");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["method"]["hyperz"] = serde_json::json!({});
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = zsl(&["train-exem", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hyperz"));
}

#[test]
fn unused_flag_for_command_exits_one() {
    let (_g, cfg, run) = fixture("2");
    let out = zsl(&["train-exem", "--config", s(&cfg), "--out", s(&run), "--k", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_features_is_data_error() {
    let (_g, cfg, run) = fixture("2");
    let feats = cfg.parent().unwrap().join("train.zsfm");
    let bytes = std::fs::read(&feats).unwrap();
    std::fs::write(&feats, &bytes[..bytes.len() - 3]).unwrap();
    let out = zsl(&["train-exem", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_non_convergence_exits_three() {
    let (_g, cfg, run) = fixture("2");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["method"]["hypers"] = serde_json::json!({ "max_iter": 1 });
    std::fs::write(&cfg, v.to_string()).unwrap();
    let lax = zsl(&["train-sync", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(lax.status.code(), Some(0));
    assert_eq!(summary(&lax)["converged"], Value::Bool(false));
    let strict = zsl(&["train-sync", "--config", s(&cfg), "--out", s(&run), "--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn predict_needs_matching_model() {
    let (_g, cfg, run) = fixture("2");
    assert!(zsl(&["train-exem", "--config", s(&cfg), "--out", s(&run)]).status.success());
    // an exem-1nn model cannot serve EXEM(ConSE)
    let out = zsl(&["predict", "--config", s(&cfg), "--out", s(&run), "--method", "exem-conse"]);
    assert_eq!(out.status.code(), Some(1));
    // but it can switch to the standardized distance
    let out = zsl(&["predict", "--config", s(&cfg), "--out", s(&run), "--method", "exem-1nns"]);
    assert!(out.status.success());
    let acc = summary(&out)["per_class_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let csv = std::fs::read_to_string(run.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 50);
}

#[test]
fn eval_gzsl_default_sweep_matches_library() {
    let (_g, cfg, run) = fixture("4");
    let out = zsl(&["eval-gzsl", "--config", s(&cfg), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cli_ausuc = summary(&out)["ausuc"].as_f64().unwrap();

    let dir = cfg.parent().unwrap();
    let paths = |f: &str, l: &str| DatasetPaths {
        features: dir.join(f),
        labels: dir.join(l),
        split: dir.join("split.json"),
        hierarchy: None,
    };
    let train = load_dataset::<f64>(&paths("train.zsfm", "train_labels.txt"), Partition::Train).unwrap();
    let test = load_dataset::<f64>(&paths("test.zsfm", "test_labels.txt"), Partition::Test).unwrap();
    let sem = read_semantic_matrix::<f64>(&dir.join("attributes.csv")).unwrap();
    let input = TrainInput { train: &train, semantics: &sem, secondary: None };
    let model = train_method(Method::parse("exem-1nn").unwrap(), &input, &Hypers::new(), 4).unwrap();
    let curve = suc_curve(&gzsl_scores(&model, &test).unwrap(), &test.split).unwrap();
    assert_eq!(cli_ausuc.to_bits(), curve.ausuc.to_bits());
    assert_eq!(std::fs::read_to_string(run.join("suc_curve.csv")).unwrap(), curve.to_csv());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let (g, cfg, _) = fixture("6");
    let mut files = Vec::new();
    for rep in 0..2 {
        let run = g.path().join(format!("rep{rep}"));
        for cmd in [
            vec!["eval-zsl"],
            vec!["eval-gzsl"],
            vec!["cv", "--metric", "cv-distance"],
            vec!["analyze"],
        ] {
            let mut args = cmd.clone();
            args.extend(["--config", s(&cfg), "--out", s(&run), "--seed", "9"]);
            assert!(zsl(&args).status.success(), "{args:?}");
        }
        files.push(run);
    }
    for name in ["metrics.json", "suc_curve.csv", "cv_report.csv", "cv_best.json", "analysis.json"] {
        let a = std::fs::read(files[0].join(name)).unwrap();
        let b = std::fs::read(files[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn cv_without_grid_is_config_error() {
    let (_g, cfg, run) = fixture("2");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["method"]["grid"] = serde_json::json!({});
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = zsl(&["cv", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn method_variant_field_composes_name() {
    let (_g, cfg, run) = fixture("2");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["method"]["name"] = serde_json::json!("sync");
    v["method"]["variant"] = serde_json::json!("cs");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = zsl(&["train-sync", "--config", s(&cfg), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["method"], "sync-cs");
}
