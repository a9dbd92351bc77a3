//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmr-falsify"))
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

#[test]
fn power_curves_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["power-curves", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("power_curves.csv")).unwrap();
    assert!(csv.starts_with("scenario,alpha,delta,power_ate,power_gate,g"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4 * 101);
}

#[test]
fn simulate_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"design":{"kind":"witness","n_rct":150,"n_obs":150},"B":20,"replicates":1}"#);
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "9", "--methods", "mmr-contrast,ate", "--oracle-nuisances", "--replicates", "3", "--out"])
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["mode"], "simulate-power");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 9);
    assert_eq!(report["replicates"].as_array().unwrap().len(), 3);
    let rates = std::fs::read_to_string(dir.path().join("run/rates.csv")).unwrap();
    assert!(rates.contains("mmr-contrast") && rates.contains(",ate,"));
}

#[test]
fn witness_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"design":{"kind":"witness"},"B":20,"oracle_nuisances":true,
            "witness":{"columns":["x1","x2"],"resolution":5}}"#,
    );
    let out = bin().args(["witness", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("witness.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "ok");
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"design":{"kind":"witness"}}"#);
    let out = bin().args(["simulate", "--config"]).arg(&cfg).args(["--methods", "bogus"]).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let out = bin().args(["falsify", "--config"]).arg(dir.path().join("missing.json")).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}
