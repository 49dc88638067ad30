use std::path::{Path, PathBuf};
use std::process::Command;

use cuspform_cli::ExperimentConfig;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cuspform(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cuspform")).args(args).output().unwrap()
}

fn small_config_text() -> String {
    std::fs::read_to_string(configs().join("burgers_small.json")).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bundled_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
    }
}

#[test]
fn unknown_system_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_config_text().replace("burgers_transport", "euler");
    let config = write(tmp.path(), "bad.json", &text);
    let out = tmp.path().join("out");
    let result = cuspform(&["run", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("system.name"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn parse_errors_name_the_field() {
    let text = small_config_text().replace("\"grid_points\"", "\"grid_pts\"");
    let err = ExperimentConfig::parse(&text).unwrap_err();
    assert!(format!("{err:#}").contains("solver"), "{err:#}");
    let text = small_config_text().replace("\"epsilons\": [0.0, 0.005]", "\"epsilons\": [-1.0]");
    let err = ExperimentConfig::parse(&text).unwrap_err();
    assert!(format!("{err:#}").contains("epsilons[0]"), "{err:#}");
}

#[test]
fn fields_only_writes_a_single_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let config = configs().join("burgers_small.json");
    let out = tmp.path().join("fields");
    let result = cuspform(&["run", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--fields-only"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names, vec!["fields.csv".to_string()]);
    let mut reader = csv::Reader::from_path(out.join("fields.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "epsilon");
    assert!(reader.records().count() > 0);
}

#[test]
fn full_run_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = configs().join("burgers_small.json");
    let out = tmp.path().join("bundle");
    let result = cuspform(&["run", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stdout));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["passed"], true);
    assert!(manifest["files"].as_array().unwrap().len() >= 7);
    for file in manifest["files"].as_array().unwrap() {
        assert!(out.join(file.as_str().unwrap()).exists());
    }
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS shock_time_unperturbed")));
}
