use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn exe() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spinglass"));
    c.env_remove("SPINGLASS_SEED");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spinglass-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn se_sweep_writes_all_formats() {
    let out = scratch("se");
    let res = exe()
        .args(["se-sweep", "--lambda-min", "0.2", "--lambda-max", "2", "--step", "0.05"])
        .args(["--formats", "csv,json,svg", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 37);

    let (header, rows) = csv_rows(&out.join("se-sweep.csv"));
    assert_eq!(
        header,
        ["lambda", "gamma_inf", "mu_inf", "sigma_inf", "q_star", "iterations", "converged"]
    );
    assert_eq!(rows.len(), 37);
    for row in &rows {
        let lambda: f64 = row[0].parse().unwrap();
        let q: f64 = row[4].parse().unwrap();
        if lambda < 1.0 {
            assert_eq!(q, 0.0, "lambda {lambda}");
        } else if lambda > 1.0 {
            assert!(q > 0.0, "lambda {lambda}");
        }
    }

    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("se-sweep.json")).unwrap()).unwrap();
    assert_eq!(json["command"], "se-sweep");
    assert_eq!(json["config"]["params"]["step"].as_f64(), Some(0.05));
    assert_eq!(json["rows"].as_array().unwrap().len(), 37);
    let svg = std::fs::read_to_string(out.join("se-sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn landscape_reports_minima_and_phase() {
    let out = scratch("landscape");
    let res = exe()
        .args(["landscape", "--lambda", "1.5", "--grid-size", "200", "--formats", "json", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("landscape.json")).unwrap()).unwrap();
    assert_eq!(json["summary"]["phase"], "EASY");
    assert!(json["summary"]["lambda_stat"].is_null());
    let q = json["summary"]["global_min_q"].as_f64().unwrap();
    assert!((q - 0.6923).abs() < 1e-3, "{q}");
    assert!(!out.join("landscape.csv").exists());
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn phases_json_carries_thresholds() {
    let out = scratch("phases");
    let res = exe()
        .args(["phases", "--lambda-min", "0.5", "--lambda-max", "1.5", "--step", "0.1"])
        .args(["--grid-size", "256", "--formats", "json", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("phases.json")).unwrap()).unwrap();
    assert_eq!(json["lambda_stat"], json["lambda_comp"]);
    assert_eq!(json["phases"].as_array().unwrap().len(), 11);
    assert_eq!(json["phases"][0]["phase"], "IMPOSSIBLE_A");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn oracle_check_writes_fixture() {
    let out = scratch("oracle");
    let res = exe()
        .args(["oracle-check", "--n", "8", "--lambda", "2", "--trials", "100", "--formats", "json", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let fixture: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("oracle-check.fixture.json")).unwrap()).unwrap();
    assert_eq!(fixture["gauge"], "sigma_0=+1");
    assert_eq!(fixture["marginals"].as_array().unwrap().len(), 8);
    assert!(fixture["logZ"].is_number());
    assert!(fixture["instance-seed"].is_object());
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn usage_errors_name_the_key() {
    let out = exe().args(["amp-run", "--n", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("lambda"), "{err}");

    let out = exe()
        .args(["sbm-bp", "--n", "100", "--a", "3", "--b", "1", "--mode", "sideways"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("mode"));
}

#[test]
fn experiment_failures_exit_one_with_context() {
    let out = scratch("fail");
    let res = exe()
        .args(["sbm-bp", "--n", "100", "--a", "3", "--b", "3", "--mode", "full", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("a=3") && err.contains("b=3"), "{err}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn config_file_and_flags_combine() {
    let out = scratch("config");
    std::fs::create_dir_all(&out).unwrap();
    let file = out.join("run.conf");
    std::fs::write(&file, "# popdyn settings\nk = 3\neps = 0.1\npool = 1000\niters = 6\nseed = 9\n").unwrap();
    let res = exe()
        .args(["popdyn", "--iters", "7", "--formats", "json", "--config"])
        .arg(&file)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("popdyn.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["params"]["iters"], 7);
    assert_eq!(json["config"]["params"]["k"].as_f64(), Some(3.0));
    assert_eq!(json["config"]["seed"]["master_seed"], 9);
    assert_eq!(json["rows"].as_array().unwrap().len(), 8);
    assert!(json["growth_rate"].is_number());
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn seed_changes_stochastic_output() {
    let run = |seed: &str| {
        let out = scratch(&format!("seed{seed}"));
        let res = exe()
            .args(["amp-run", "--n", "200", "--lambda", "1.5", "--seeds", "1", "--formats", "csv", "--seed", seed])
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(res.status.success());
        let (_, rows) = csv_rows(&out.join("amp-run.csv"));
        let _ = std::fs::remove_dir_all(&out);
        rows
    };
    assert_ne!(run("1"), run("2"));
}
