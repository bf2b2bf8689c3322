mod common;

use std::path::Path;
use std::process::{Command, Output};

fn qcforest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcforest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn pima() -> String {
    common::data_dir().join("pima.csv").to_string_lossy().into_owned()
}

/// Column `name` of a `metric,fold,value` table.
fn metric(table: &str, name: &str, fold: &str) -> f64 {
    table
        .lines()
        .find_map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0] == name && cols[1] == fold).then(|| cols[2].parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no {name}/{fold} in\n{table}"))
}

#[test]
fn build_writes_metrics_and_models() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let out = dir.path().join("metrics.csv");
    let o = qcforest(&[
        "build", "--data", &pima(), "--trees", "10", "--k", "4", "--depth", "3", "--folds", "2",
        "--seed", "3", "--model-out", p(&model), "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(&out).unwrap();
    assert!(table.starts_with("metric,fold,value\n"));
    assert!(metric(&table, "roc_auc", "median") > 0.7);
    for f in 0..2 {
        assert!(dir.path().join(format!("m-fold{f}.json")).exists());
        assert!(dir.path().join(format!("m-fold{f}.json.train.csv")).exists());
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("data = {}\ntrees = 5\nfolds = 1\nseed = 9\n", pima())).unwrap();
    let a = qcforest(&["build", "--config", p(&cfg)]);
    let b = qcforest(&["build", "--config", p(&cfg), "--trees", "5"]);
    let c = qcforest(&["build", "--config", p(&cfg), "--seed", "10"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));

    std::fs::write(&cfg, "tres = 5\n").unwrap();
    assert_eq!(qcforest(&["build", "--config", p(&cfg)]).status.code(), Some(2));
}

#[test]
fn retrain_verify_predict_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let o = qcforest(&[
        "build", "--data", &pima(), "--trees", "10", "--folds", "1", "--model-out", p(&model),
    ]);
    assert!(o.status.success());
    let history = std::fs::read_to_string(dir.path().join("m.json.train.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    let hist = dir.path().join("hist.csv");
    let batch = dir.path().join("batch.csv");
    std::fs::write(&hist, lines[..301].join("\n") + "\n").unwrap();
    let mut b = vec![lines[0]];
    b.extend(&lines[301..351]);
    std::fs::write(&batch, b.join("\n") + "\n").unwrap();

    // the history must be exactly what the model saw
    let wrong = qcforest(&["retrain", "--model-in", p(&model), "--data", p(&hist), "--batch", p(&batch)]);
    assert_eq!(wrong.status.code(), Some(1));

    let retrained = dir.path().join("r.json");
    let o = qcforest(&[
        "retrain", "--model-in", p(&model), "--batch", p(&batch), "--verify", "--test", &pima(),
        "--model-out", p(&retrained),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(metric(&table, "weight_state_max_rel_dev", "all") < 1e-9);
    assert!(metric(&table, "roc_auc", "post") > 0.7);
    let saved = std::fs::read_to_string(dir.path().join("r.json.train.csv")).unwrap();
    assert_eq!(saved.lines().count(), lines.len() + 50);

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, format!("{}\n", lines[0])).unwrap();
    let o = qcforest(&["retrain", "--model-in", p(&retrained), "--batch", p(&empty), "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = qcforest(&["predict", "--model-in", p(&retrained), "--data", &pima()]);
    assert!(o.status.success());
    let preds = stdout(&o);
    assert_eq!(preds.lines().next(), Some("row,label,p_tested_positive,p_tested_negative"));
    assert_eq!(preds.lines().count(), 769);
    let o = qcforest(&["predict", "--model-in", p(&retrained), "--data", &pima(), "--threshold", "auto"]);
    assert_eq!(o.status.code(), Some(2));

    let o = qcforest(&["eval", "--model-in", p(&retrained), "--data", &pima(), "--threshold", "auto"]);
    assert!(o.status.success());
    let table = stdout(&o);
    let t = metric(&table, "threshold", "all");
    assert!((0.0..=1.0).contains(&t));
    assert!(metric(&table, "accuracy", "heldout") > 0.6);
}

#[test]
fn cost_reports_every_component() {
    let o = qcforest(&["cost", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("eval_cost,304\n"));
    for name in ["kp_load", "load_new", "weights_update", "clustering", "leaf_label", "retrain_total"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{name},"))), "{name}");
    }
    let o = qcforest(&["cost", "--dim", "8", "--format", "csv"]);
    assert!(stdout(&o).contains("eval_cost,64\n"));
    assert_eq!(qcforest(&["cost", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(qcforest(&["cost", "--noise-delta", "0.9"]).status.code(), Some(2));
}

#[test]
fn stream_and_entropy_reports_have_documented_columns() {
    let o = qcforest(&[
        "stream-experiment", "--replications", "2", "--trees", "5", "--initial", "100",
        "--batch-size", "50", "--batches", "2", "--test-size", "200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("samples_used,method,median_auc,std_auc"));
    assert_eq!(text.lines().count(), 1 + 3 * 2);

    let o = qcforest(&["entropy-report", "--folds", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("variant,depth,median,std"));
    assert_eq!(text.lines().count(), 1 + 3 * 6);
}

#[test]
fn bad_inputs_exit_nonzero() {
    assert_eq!(qcforest(&["build"]).status.code(), Some(2));
    assert_eq!(qcforest(&["build", "--data", "/no/such.csv"]).status.code(), Some(1));
    assert_eq!(
        qcforest(&["build", "--data", &pima(), "--test-ratio", "1.5"]).status.code(),
        Some(2)
    );
    assert_eq!(qcforest(&["frobnicate"]).status.code(), Some(2));
}
