use std::path::Path;
use std::process::{Command, Output};

fn kdrop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdrop"))
        .current_dir(dir)
        .env_remove("KDROP_THREADS")
        .args(args)
        .output()
        .expect("spawn kdrop")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kdrop(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line.
fn fails(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = kdrop(dir, args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    (out.status.code().unwrap(), stderr.trim_end().to_string())
}

fn small_dataset(dir: &Path) {
    ok(dir, &["synth", "--output", "d.embf", "--n", "80", "--seed", "3"]);
}

const FAST: &[&str] = &["--dataset-path", "d.embf", "--epochs", "15", "--mc-passes", "20"];

#[test]
fn patience_beyond_epochs_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let (code, line) = fails(tmp.path(), &["run", "--dataset-path", "d.embf", "--epochs", "5"]);
    assert_eq!(code, 2);
    assert!(line.contains("early_stop_patience"), "{line}");
}

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn run_writes_stable_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    let line = ok(dir, &with(&["run"], &with(FAST, &["--output-dir", "out", "--write-svg"])));
    let summary: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(summary["splits"], 1);
    for name in [
        "report.json",
        "splits.json",
        "bins.csv",
        "per_class_brier.csv",
        "trace_split0.csv",
        "predictions_split0.csv",
        "model_split0.kdm",
        "bins.svg",
        "per_class_brier.svg",
    ] {
        assert!(dir.join("out").join(name).is_file(), "{name}");
    }
}

#[test]
fn reports_are_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    let strip = |path: &str| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(path)).unwrap()).unwrap();
        v["timestamp"] = serde_json::Value::Null;
        v
    };
    let args = with(&["crossval", "--folds", "3"], FAST);
    let one = Command::new(env!("CARGO_BIN_EXE_kdrop"))
        .current_dir(dir)
        .env("KDROP_THREADS", "1")
        .args(with(&args, &["--output-dir", "a"]))
        .output()
        .unwrap()
        .status;
    let four = Command::new(env!("CARGO_BIN_EXE_kdrop"))
        .current_dir(dir)
        .env("KDROP_THREADS", "4")
        .args(with(&args, &["--output-dir", "b"]))
        .output()
        .unwrap()
        .status;
    assert!(one.success() && four.success());
    let a = strip("a/report.json");
    assert_eq!(a["splits"].as_array().unwrap().len(), 3);
    assert_eq!(a, strip("b/report.json"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"dataset_path": "d.embf", "mc_passes": 10, "seed": 4, "train": {"epochs": 5, "early_stop_patience": 2}, "split": {"mode": {"k_shot": 3}, "stratified": true, "seed": 1}}"#,
    )
    .unwrap();
    ok(dir, &["run", "--config", "cfg.json", "--seed", "6", "--output-dir", "o"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 6);
    assert_eq!(report["config"]["mc_passes"], 10);
    assert_eq!(report["splits"][0]["train_size"], 6);
}

#[test]
fn baseline_and_proposed_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    ok(dir, &with(&["run"], &with(FAST, &["--output-dir", "p"])));
    ok(dir, &with(&["run"], &with(FAST, &["--output-dir", "b", "--baseline-mode"])));
    let text = ok(dir, &["compare", "--proposed", "p/report.json", "--baseline", "b/report.json", "--output", "delta.csv"]);
    assert!(text.contains("brier"));
    let csv = std::fs::read_to_string(dir.join("delta.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("metric,"));

    // different split seed: not comparable
    ok(dir, &with(&["run"], &with(FAST, &["--output-dir", "q", "--split-seed", "9", "--baseline-mode"])));
    let (code, line) = fails(dir, &["compare", "--proposed", "p/report.json", "--baseline", "q/report.json"]);
    assert_eq!(code, 2);
    assert!(line.starts_with("error kind=config message="), "{line}");
}

#[test]
fn train_eval_flag_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    ok(dir, &with(&["train"], &with(FAST, &["--model-out", "m/head.kdm"])));
    assert!(dir.join("m/head.trace.csv").is_file());
    let line = ok(dir, &with(&["eval", "--model", "m/head.kdm"], &with(FAST, &["--output-dir", "e"])));
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["instances"], 80);
    assert!(dir.join("e/eval_report.json").is_file());

    let flagged = ok(dir, &with(&["flag", "--model", "m/head.kdm", "--flag-threshold", "0.99"], FAST));
    assert!(flagged.starts_with("id,max_prob,predicted,second_choice\n"));
    let (code, _) = fails(dir, &with(&["flag", "--model", "m/head.kdm", "--flag-threshold", "0.3"], FAST));
    assert_eq!(code, 2);

    ok(dir, &with(&["run"], &with(FAST, &["--output-dir", "r"])));
    ok(dir, &["report-svg", "--report", "r/report.json"]);
    assert!(std::fs::read_to_string(dir.join("r/bins.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn fewshot_runs_each_shot_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);
    let csv = ok(dir, &with(&["fewshot", "--shots", "0,5"], &with(FAST, &["--output-dir", "fs"])));
    assert_eq!(csv.lines().count(), 3);
    for k in [0, 5] {
        assert!(dir.join(format!("fs/shots_{k}/report.json")).is_file());
    }
    let five: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("fs/shots_5/report.json")).unwrap()).unwrap();
    assert_eq!(five["splits"][0]["train_size"], 10);
    let zero: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("fs/shots_0/report.json")).unwrap()).unwrap();
    assert_eq!(zero["splits"][0]["trained"], false);
}

#[test]
fn failures_exit_with_kind_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir);

    let (code, line) = fails(dir, &["run"]);
    assert_eq!((code, line.starts_with("error kind=config ")), (2, true), "{line}");

    let (code, line) = fails(dir, &["run", "--not-a-flag"]);
    assert_eq!((code, line.starts_with("error kind=config ")), (2, true), "{line}");

    let (code, _) = fails(dir, &with(&["run"], &with(FAST, &["--tau=-1"])));
    assert_eq!(code, 2);

    let (code, line) = fails(dir, &["run", "--dataset-path", "missing.embf"]);
    assert_eq!((code, line.starts_with("error kind=data ")), (3, true), "{line}");

    let mut bytes = std::fs::read(dir.join("d.embf")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(dir.join("bad.embf"), bytes).unwrap();
    let (code, _) = fails(dir, &["run", "--dataset-path", "bad.embf"]);
    assert_eq!(code, 3);

    // more shots than the smallest class holds
    let (code, line) = fails(dir, &with(&["run", "--split-mode", "kshot:100"], FAST));
    assert_eq!(code, 3, "{line}");
    assert!(line.contains("class_"), "{line}");

    // every instance drawn for training leaves nothing to score
    let (code, line) = fails(dir, &with(&["run", "--split-mode", "kshot:40"], FAST));
    assert_eq!(code, 3);
    assert!(line.contains("split 0: split leaves no test instances"), "{line}");

    let out = Command::new(env!("CARGO_BIN_EXE_kdrop"))
        .current_dir(dir)
        .env("KDROP_THREADS", "zero")
        .args(["run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
