use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn stage(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stage"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn thermometer(row: &[i8]) -> bool {
    row.windows(2).all(|w| !(w[0] == -1 && w[1] == 1))
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(&stage(&["synth", "--n0", "1000", "--stages", "3", "--seed", "7", "--out", name], dir.path()));
    }
    assert_eq!(digest(&dir.path().join("a.csv")), digest(&dir.path().join("b.csv")));
    assert!(dir.path().join("a.schema.json").exists());
}

#[test]
fn version_and_help() {
    let dir = tempfile::tempdir().unwrap();
    let out = stage(&["--version"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("format_version 1"));
    let out = stage(&["train-mlssl", "--help"], dir.path());
    ok(&out);
    let help = String::from_utf8_lossy(&out.stdout);
    for needle in ["--lambda", "[default: 0.5]", "--knn", "[default: 20]", "--hnn", "[default: 5]"] {
        assert!(help.contains(needle), "{needle}");
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stage(&["synth", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(stage(&["launch"], dir.path()).status.code(), Some(1));
    let out = stage(&["synth", "--n0", "3", "--out", "x.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = stage(&["predict", "--clf", "none.json", "--data", "none.csv", "--out", "p.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_file_values_apply_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"seed": 7, "synth": {"n0": 1000, "stages": 3}}"#).unwrap();
    ok(&stage(&["synth", "--config", "cfg.json", "--out", "a.csv"], dir.path()));
    ok(&stage(&["synth", "--n0", "1000", "--stages", "3", "--seed", "7", "--out", "b.csv"], dir.path()));
    assert_eq!(digest(&dir.path().join("a.csv")), digest(&dir.path().join("b.csv")));
    ok(&stage(&["synth", "--config", "cfg.json", "--seed", "8", "--out", "c.csv"], dir.path()));
    assert_ne!(digest(&dir.path().join("a.csv")), digest(&dir.path().join("c.csv")));
}

fn read_predictions(path: &Path, stages: usize) -> Vec<Vec<i8>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (1..=stages).map(|k| r[k].parse().unwrap()).collect()
        })
        .collect()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&stage(&["synth", "--n0", "400", "--stages", "3", "--seed", "3", "--out", "d.csv"], d));
    ok(&stage(
        &["train-aemtd", "--data", "d.csv", "--schema", "d.schema.json", "--out", "ae.json", "--epochs", "5", "--history", "h.csv"],
        d,
    ));
    ok(&stage(&["complete", "--model", "ae.json", "--data", "d.csv", "--out", "c.csv", "--labels-out", "y.csv"], d));
    ok(&stage(
        &["train-mlssl", "--data", "c.csv", "--labels", "y.csv", "--out", "clf.json", "--epochs", "5"],
        d,
    ));
    ok(&stage(&["predict", "--clf", "clf.json", "--data", "c.csv", "--out", "p.csv"], d));
    let preds = read_predictions(&d.join("p.csv"), 3);
    assert_eq!(preds.len(), 400);
    assert!(preds.iter().all(|r| thermometer(r)));

    for setting in ["n-mbt", "aemtd-mbt", "aemtd-imc"] {
        let data = if setting == "n-mbt" { "d.csv" } else { "c.csv" };
        let out = format!("{setting}.json");
        ok(&stage(
            &["baseline", "--setting", setting, "--data", data, "--schema", "d.schema.json", "--out", &out, "--epochs", "5"],
            d,
        ));
        ok(&stage(&["predict", "--clf", &out, "--data", data, "--out", "bp.csv"], d));
    }

    std::fs::write(
        d.join("plan.json"),
        r#"{"source": {"synth": {"n0": 300, "survival_rates": [0.5, 0.4], "dims_per_stage": [4, 2, 2]}},
            "split": {"kfold": {"k": 1}},
            "aemtd_sgd": {"max_epochs": 3}, "mlssl_sgd": {"max_epochs": 3, "learning_rate": 0.01}}"#,
    )
    .unwrap();
    let out = stage(&["evaluate", "--plan", "plan.json", "--out", "report", "--jobs", "2"], d);
    assert_eq!(out.status.code(), Some(1), "a single fold is rejected");
    assert!(!d.join("report").exists());

    std::fs::write(
        d.join("plan.json"),
        r#"{"source": {"synth": {"n0": 300, "survival_rates": [0.5, 0.4], "dims_per_stage": [4, 2, 2]}},
            "split": {"kfold": {"k": 3}},
            "aemtd_sgd": {"max_epochs": 3}, "mlssl_sgd": {"max_epochs": 3, "learning_rate": 0.01}}"#,
    )
    .unwrap();
    ok(&stage(&["evaluate", "--plan", "plan.json", "--out", "report", "--jobs", "2"], d));
    let report = std::fs::read_to_string(d.join("report/report.csv")).unwrap();
    assert!(report.starts_with("setting,stage,mean_f1,std_f1,n"));
    assert_eq!(report.lines().count(), 1 + 4 * 2);
    assert!(d.join("report/manifest.json").exists());
}

#[test]
fn evaluate_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("plan.json"),
        r#"{"source": {"synth": {"n0": 300, "survival_rates": [0.5, 0.4], "dims_per_stage": [4, 2, 2]}},
            "split": {"kfold": {"k": 3}}, "settings": ["n-mbt", "aemtd-iml-ssl"],
            "aemtd_sgd": {"max_epochs": 3}, "mlssl_sgd": {"max_epochs": 3, "learning_rate": 0.01}}"#,
    )
    .unwrap();
    ok(&stage(&["evaluate", "--plan", "plan.json", "--out", "r1", "--seed", "4"], d));
    ok(&stage(&["evaluate", "--plan", "plan.json", "--out", "r2", "--seed", "4", "--jobs", "3"], d));
    assert_eq!(digest(&d.join("r1/report.csv")), digest(&d.join("r2/report.csv")));
}

#[test]
fn schema_mismatch_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&stage(&["synth", "--n0", "300", "--stages", "2", "--seed", "1", "--out", "two.csv"], d));
    ok(&stage(&["synth", "--n0", "300", "--stages", "3", "--seed", "1", "--out", "three.csv"], d));
    ok(&stage(&["train-aemtd", "--data", "two.csv", "--schema", "two.schema.json", "--out", "ae2.json", "--epochs", "2"], d));
    ok(&stage(&["complete", "--model", "ae2.json", "--data", "two.csv", "--out", "c2.csv"], d));
    ok(&stage(&["train-mlssl", "--data", "c2.csv", "--out", "clf2.json", "--epochs", "2"], d));
    ok(&stage(&["train-aemtd", "--data", "three.csv", "--schema", "three.schema.json", "--out", "ae3.json", "--epochs", "2"], d));
    ok(&stage(&["complete", "--model", "ae3.json", "--data", "three.csv", "--out", "c3.csv"], d));

    let out = stage(&["predict", "--clf", "clf2.json", "--data", "c3.csv", "--out", "p.csv"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("p.csv").exists());
}
