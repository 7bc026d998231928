use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
preset = "sparse"
dqn_episodes = 3
tabular_episodes = 3
eval_episodes = 2
seeds = [4]

[data]
history_days = 2

[eta]
simulator = "constant_speed"

[eta.stnn]
epochs = 2

[eta.timenn]
epochs = 2
"#;

fn carpool(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carpool"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("error line");
    serde_json::from_str(last).expect("JSON error on stderr")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn synth_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&carpool(
        dir.path(),
        &[
            "data",
            "synth",
            "--preset",
            "sparse",
            "--seed",
            "3",
            "--outliers",
            "0.1",
        ],
    ));
    let n = v["trips"].as_u64().unwrap();
    assert!(n > 0);
    let synth = dir.path().join("synthetic.csv");
    assert!(synth.exists());

    let report = stdout_json(&carpool(
        dir.path(),
        &["data", "ingest", "--input", synth.to_str().unwrap()],
    ));
    let (kept, dropped) = (
        report["accepted"].as_u64().unwrap(),
        report["rejected"].as_u64().unwrap(),
    );
    assert_eq!(kept + dropped, n);
    assert!(dropped > 0, "injected outliers should be rejected");
    assert!(dir.path().join("trips.csv").exists());
    assert!(dir.path().join("ingest_report.json").exists());
}

#[test]
fn synth_is_seed_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        stdout_json(&carpool(
            d.path(),
            &["data", "synth", "--preset", "dense", "--seed", "9"],
        ));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("synthetic.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn eta_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let v = stdout_json(&carpool(dir.path(), &["--config", &cfg, "eta", "train"]));
    assert!(v["test"]["mae"].as_f64().unwrap() > 0.0);
    let model = dir.path().join("stnn");
    let model = model.to_str().unwrap();

    let m = stdout_json(&carpool(
        dir.path(),
        &["--config", &cfg, "eta", "eval", "--model", model],
    ));
    assert_eq!(m["mae"], v["test"]["mae"]);

    let p = stdout_json(&carpool(
        dir.path(),
        &[
            "eta",
            "predict",
            "--model",
            model,
            "--from",
            "40.806,-73.968",
            "--to",
            "40.82,-73.955",
            "--time",
            "30000",
        ],
    ));
    assert!(p["travel_time"].as_f64().unwrap() > 0.0);
    assert!(p["travel_distance"].as_f64().unwrap() > 0.0);

    let table = stdout_json(&carpool(dir.path(), &["--config", &cfg, "eta", "eval"]));
    let methods: Vec<&str> = table["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["LRT", "TimeNN", "ST-NN"]);
    assert!(dir.path().join("eta_metrics.csv").exists());
}

#[test]
fn train_each_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for (kind, name) in [("fixed", "fixed"), ("tabq", "tabular"), ("dqn", "dqn")] {
        let v = stdout_json(&carpool(dir.path(), &["--config", &cfg, "train", kind]));
        assert_eq!(v["policy"], name);
        assert_eq!(v["seed"], 4);
        assert!(v["mean_cumulative_reward"].as_f64().unwrap() >= 0.0);
    }
    assert!(dir.path().join("models/qtable_weekday_seed4.csv").exists());
    assert!(dir.path().join("models/dqn_weekday_seed4.json").exists());
    assert!(dir
        .path()
        .join("curves/dqn_mean_q_weekday_seed4.csv")
        .exists());
}

#[test]
fn eval_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = carpool(dir.path(), &["--config", &cfg, "eval"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    for p in ["wait", "fixed", "tabular", "dqn"] {
        assert!(table.contains(p), "{table}");
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seeds"], serde_json::json!([4]));

    let again = carpool(dir.path(), &["report"]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), table);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let v = stdout_json(&carpool(
        dir.path(),
        &[
            "--config", &cfg, "--seed", "8", "--day", "weekend", "train", "fixed",
        ],
    ));
    assert_eq!(v["seed"], 8);
    assert_eq!(v["day"], "weekend");
}

#[test]
fn errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_json(&carpool(
        dir.path(),
        &["data", "ingest", "--input", "/no/such/file.csv"],
    ));
    assert_eq!(e["error"], "io");

    let e = error_json(&carpool(
        dir.path(),
        &["data", "synth", "--preset", "medium"],
    ));
    assert_eq!(e["error"], "config");

    let e = error_json(&carpool(dir.path(), &["frobnicate"]));
    assert_eq!(e["error"], "usage");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[env]\ncarpool_fraction = 2.0\n").unwrap();
    let e = error_json(&carpool(
        dir.path(),
        &["--config", bad.to_str().unwrap(), "train", "fixed"],
    ));
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("0"));

    let e = error_json(&carpool(
        dir.path(),
        &["report", "--input", "/no/report.json"],
    ));
    assert_eq!(e["error"], "io");
}

#[test]
fn bbox_region_flag() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&carpool(
        dir.path(),
        &[
            "--region",
            "bbox=40.75,40.7599,-73.99,-73.9801",
            "data",
            "synth",
            "--preset",
            "dense",
        ],
    ));
    assert!(v["trips"].as_u64().unwrap() > 0);
    let e = error_json(&carpool(
        dir.path(),
        &["--region", "bbox=1,2", "data", "synth"],
    ));
    assert_eq!(e["message"].as_str().map(|m| !m.is_empty()), Some(true));
}

#[test]
fn readme_config_parses() {
    let readme = include_str!("../../../README.md");
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let cfg = carpool::harness::ExperimentConfig::from_toml_str(block).unwrap();
    assert_eq!(cfg.region, carpool::harness::Preset::Sparse.region());
    assert_eq!(cfg.dqn_episodes, 150);
}
