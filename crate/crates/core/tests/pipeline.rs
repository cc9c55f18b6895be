mod common;

use std::process::Command;

use seizure_core::cli::{
    cmd_evaluate, cmd_predict, cmd_train, predict_rows, ModelArtifact, RunConfig, MODEL_FILE,
    TRAIN_STAGES,
};
use seizure_core::Error;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seizure"))
}

#[test]
fn train_runs_stages_in_order_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmd_train(&common::quick_config(dir.path()), &mut |_| {}).unwrap();
    assert_eq!(o.stages, TRAIN_STAGES);
    let denoise = o.stages.iter().position(|s| *s == "denoise").unwrap();
    let scale = o.stages.iter().position(|s| *s == "scale").unwrap();
    assert!(denoise < scale);
    for f in ["model.bin", "curves.csv", "confusion.csv", "metrics.csv", "report.txt", "test_split.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let curves = String::from_utf8(common::read(&dir.path().join("curves.csv"))).unwrap();
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,train_acc,val_loss,val_acc,lr"));
    assert_eq!(lines.count(), o.state.epochs());
    let cm = String::from_utf8(common::read(&dir.path().join("confusion.csv"))).unwrap();
    assert!(cm.starts_with("tn,fp,fn,tp\n"));
    assert!(!dir.path().join("model.bin.tmp").exists());
    assert_eq!(o.n_test, 16);
}

#[test]
fn saved_artifact_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmd_train(&common::quick_config(dir.path()), &mut |_| {}).unwrap();
    let loaded = ModelArtifact::load(dir.path().join(MODEL_FILE)).unwrap();
    assert_eq!(loaded, o.artifact);
    assert_eq!(loaded.meta("epochs_run"), Some("3"));
}

#[test]
fn invalid_fraction_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::quick_config(dir.path());
    cfg.split.train_fraction = 1.5;
    let err = cmd_train(&cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(&err.source, Error::Config { field, .. } if field == "train_fraction"));
    assert_eq!(err.exit_code(), 1);
    assert!(!dir.path().join(MODEL_FILE).exists());

    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "synthetic = true\ntrain_fraction = 1.5\n").unwrap();
    let out = bin().args(["train", "--config"]).arg(&conf).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train_fraction"));
}

#[test]
fn evaluate_reproduces_training_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmd_train(&common::quick_config(dir.path()), &mut |_| {}).unwrap();
    let eval_dir = dir.path().join("eval");
    let r = cmd_evaluate(&dir.path().join(MODEL_FILE), &dir.path().join("test_split.csv"), Some(&eval_dir)).unwrap();
    assert_eq!(r, o.report);
    for f in ["metrics.csv", "confusion.csv"] {
        assert_eq!(common::read(&eval_dir.join(f)), common::read(&dir.path().join(f)));
    }
}

#[test]
fn corrupted_version_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&common::quick_config(dir.path()), &mut |_| {}).unwrap();
    let model = dir.path().join(MODEL_FILE);
    let mut bytes = common::read(&model);
    let pos = bytes.iter().position(|&b| b == b'\n').unwrap() - 1;
    bytes[pos] = b'7';
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, bytes).unwrap();
    let eval_dir = dir.path().join("eval");
    let err = cmd_evaluate(&bad, &dir.path().join("test_split.csv"), Some(&eval_dir)).unwrap_err();
    assert!(matches!(err.source, Error::Artifact(ref m) if m.contains("version")));
    assert!(!eval_dir.exists());

    let out = bin()
        .args(["evaluate", "--model"])
        .arg(&bad)
        .arg("--data")
        .arg(dir.path().join("test_split.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn predict_is_total_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&common::quick_config(dir.path()), &mut |_| {}).unwrap();
    let art = ModelArtifact::load(dir.path().join(MODEL_FILE)).unwrap();

    let zeros = vec!["0"; 178].join(",");
    let short = vec!["1"; 100].join(",");
    let input = format!("{zeros}\n{short}\n{zeros}\n");
    let mut out = Vec::new();
    let s = predict_rows(&art, input.as_bytes(), &mut out).unwrap();
    assert_eq!(s.scored, 2);
    assert_eq!(s.rejected.len(), 1);
    assert_eq!(s.rejected[0].0, 2);
    let text = String::from_utf8(out.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let (p, label) = lines[0].split_once(',').unwrap();
    let p: f64 = p.parse().unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert_eq!(label, if p > 0.5 { "1" } else { "0" });
    assert_eq!(lines[0].split_once('.').unwrap().1.len(), "123456,0".len());

    let mut again = Vec::new();
    predict_rows(&art, input.as_bytes(), &mut again).unwrap();
    assert_eq!(out, again);
}

#[test]
fn predict_flags_seizure_rows() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&common::quick_config(dir.path()), &mut |_| {}).unwrap();
    let mut out = Vec::new();
    let test = dir.path().join("test_split.csv");
    let s = cmd_predict(&dir.path().join(MODEL_FILE), &test, &mut out).unwrap();
    let d = seizure_core::dataset::load_csv(&test).unwrap();
    assert_eq!(s.scored, d.len());
    let text = String::from_utf8(out).unwrap();
    let hits = text
        .lines()
        .zip(&d.labels)
        .filter(|(l, &y)| y == 1 && l.ends_with(",1"))
        .count();
    assert_eq!(hits, d.n_positive());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let out = bin().arg("gradcheck").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().filter(|l| l.ends_with("ok")).count() >= 8);

    let out = bin().args(["train", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "no data and no synthetic fallback");

    let out = bin()
        .args(["train", "--data", "/nonexistent/eeg.csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: load:"));

    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = bin().args(["synth", "--per-class", "5", "--seed", "4", "--out"]).arg(p).output().unwrap();
        assert!(out.status.success());
    }
    assert_eq!(common::read(&a), common::read(&b));
    assert_eq!(seizure_core::dataset::load_csv(&a).unwrap().len(), 10);
}

#[test]
fn predict_binary_reports_bad_rows_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&common::quick_config(dir.path()), &mut |_| {}).unwrap();
    let input = dir.path().join("in.csv");
    let good = vec!["2.5"; 178].join(",");
    std::fs::write(&input, format!("{good}\n{good},x,y\n{good}\n")).unwrap();
    let out = bin()
        .args(["predict", "--model"])
        .arg(dir.path().join(MODEL_FILE))
        .arg("--data")
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "synthetic = true\nsynthetic_per_class = 20\nmax_epochs = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["train", "--quiet", "--seed", "5", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let used: RunConfig = RunConfig::from_file(out_dir.join("config.txt")).unwrap();
    assert_eq!(used.hyper.seed, 5);
    assert_eq!(used.hyper.max_epochs, 1);
    assert_eq!(used.synthetic_per_class, 20);
}
