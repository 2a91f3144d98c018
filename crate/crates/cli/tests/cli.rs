use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const TORUS: &str = r#"{
    "background": {"kind": "torus", "n": 2, "grid": [8, 8], "phi0": "expr:0.2*cos(x1)"},
    "params": {"m": 1},
    "flow": {"t_end": 0.05, "record_every": 5, "u0": "expr:1 + 0.05*sin(x2)"}
}"#;

fn wyf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wyf")).args(args).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn flow_writes_csv_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.json");
    fs::write(&cfg, TORUS).unwrap();
    let out = dir.path().join("out");
    let o = wyf(&["flow", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,r_m,volume,de_l2,sup_dev,h1_dev"));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["command"], "flow");
    assert!(summary["volume_drift"].as_f64().unwrap() < 1e-6);
    let manifest = json(&out.join("manifest.json"));
    for name in ["trajectory.csv", "snapshots.csv", "summary.json"] {
        assert_eq!(manifest["files"][name].as_str().unwrap().len(), 64, "{name}");
    }
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, TORUS.replace("\"t_end\"", "\"t_stop\": 1, \"t_end\"")).unwrap();
    let out = dir.path().join("out");
    let o = wyf(&["flow", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = json(&out.join("error.json"));
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("t_stop"));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    fs::write(
        &cfg,
        r#"{"background": {"kind": "sphere_symmetric", "n": 3, "node_count": 32, "unit_volume": true},
            "params": {"m": 0}, "reduction": {"newton_tol": 1e-30}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = wyf(&["reduce", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("error.json"))["exit_code"], 3);
}

#[test]
fn directory_batch_uses_one_subdirectory_per_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfgs");
    fs::create_dir(&cfgs).unwrap();
    fs::write(cfgs.join("a.json"), TORUS).unwrap();
    fs::write(cfgs.join("b.json"), TORUS.replace("0.05*sin", "0.02*sin")).unwrap();
    fs::write(cfgs.join("c.json"), "{").unwrap();
    let out = dir.path().join("out");
    let o = wyf(&["flow", "-c", cfgs.to_str().unwrap(), "-o", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(out.join("a/summary.json").exists());
    assert!(out.join("b/summary.json").exists());
    assert!(out.join("c/error.json").exists());
}

#[test]
fn certificate_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cert");
    let o = wyf(&[
        "certify-as3", "--n1", "2", "--n2", "1", "--m", "1", "--base-volume", "2", "--v3", "0.5", "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "lambda1 = 8"), "{text}");
    assert!(out.join("certificate.json").exists());
}
