use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_serial-risk")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn synth_into(dir: &Path) -> String {
    ok(&["synth", "--output-dir", dir.to_str().unwrap()]);
    dir.join("config.toml").to_str().unwrap().to_string()
}

#[test]
fn synth_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_into(dir.path());
    for f in ["events.csv", "features.csv", "theta_true.json", "synth.toml", "config.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    ok(&["--config", &cfg, "train"]);
    assert!(dir.path().join("theta.json").exists());
    ok(&["--config", &cfg, "predict", "--series", "3"]);
    let risk = fs::read_to_string(dir.path().join("risk_3.csv")).unwrap();
    assert_eq!(risk.lines().count(), 1 + 900);

    ok(&["--config", &cfg, "--resolution", "900", "--resolution", "1100", "evaluate"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2 * 5);

    let ranks = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    let mut per: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for line in ranks.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *per.entry((f[0].into(), f[1].into(), f[2].into())).or_default() += 1;
    }
    assert_eq!(per.len(), 5 * 2 * 40);
    assert!(per.values().all(|&n| n == 1));
    for cells in [900, 1100] {
        assert!(dir.path().join(format!("theta_{cells}.json")).exists());
    }
}

#[test]
fn unknown_series_is_an_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_into(dir.path());
    let out = run(&["--config", &cfg, "predict", "--series", "999"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "unknown_series");
    assert!(err["error"]["message"].as_str().unwrap().contains("999"));
    assert!(!dir.path().join("risk_999.csv").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlearnign_rate = 0.1\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid_config");
}

#[test]
fn oracle_scores_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_into(dir.path());
    ok(&["--config", &cfg, "evaluate", "--oracle"]);
    let ranks = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    let oracle: Vec<&str> = ranks.lines().filter(|l| l.starts_with("oracle,")).collect();
    assert_eq!(oracle.len(), 40);
    assert!(oracle.iter().all(|l| l.split(',').nth(3) == Some("1")));
}
