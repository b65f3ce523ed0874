use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kinetic(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kinetic"));
    cmd.args(args).env_remove("KINETIC_OUT_DIR");
    if let Some(p) = env_out {
        cmd.env("KINETIC_OUT_DIR", p);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const CENSUS: &str = r#"{"scenario": {"kind": "diagrams", "external": 2, "max_fusions": 3}}"#;

#[test]
fn lists_every_scenario() {
    let out = kinetic(&["list-scenarios"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["evolve", "isotropic", "linearize", "correlation", "diagnostics", "diagrams", "wick"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from\n{text}");
    }
}

#[test]
fn validate_reports_odd_side_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "odd.json",
        r#"{"grid": {"dim": 2, "side": 5}, "statistics": "fermion",
            "scenario": {"kind": "correlation", "beta": 1.0, "mu": 0.0, "step": 0.1}}"#,
    );
    let out = kinetic(&["validate", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("grid"));
    let bad = write_config(dir.path(), "bad.json", "{ not json");
    assert_eq!(kinetic(&["validate", "--config", &bad], None).status.code(), Some(2));
    let ok = write_config(dir.path(), "ok.json", CENSUS);
    assert_eq!(kinetic(&["validate", "--config", &ok], None).status.code(), Some(0));
}

#[test]
fn census_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "census.json", CENSUS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(kinetic(&["run", "--config", &cfg, "--out", a.to_str().unwrap()], None).status.success());
    assert!(kinetic(&["run", "--config", &cfg, "--threads", "1", "--out", b.to_str().unwrap()], None).status.success());
    let csv = fs::read(a.join("census.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("census.csv")).unwrap());
    let text = String::from_utf8(csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    // |G_n| = 1, 2, 8, 48
    let histories: Vec<&str> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(histories, ["1", "2", "8", "48"]);
    assert!(a.join("manifest.json").exists());
}

#[test]
fn environment_sets_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "census.json", CENSUS);
    let target = dir.path().join("from_env");
    assert!(kinetic(&["run", "--config", &cfg], Some(&target)).status.success());
    assert!(target.join("census.csv").exists());
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "blowup.json",
        r#"{"grid": {"dim": 2, "side": 4}, "statistics": "fermion",
            "model": {"potential": [{"offset": [0, 0], "value": 1.0}, {"offset": [1, 0], "value": 0.5}, {"offset": [-1, 0], "value": 0.5}]},
            "epsilon": {"policy": "fixed", "value": 0.001},
            "scenario": {"kind": "evolve", "initial": {"kind": "random", "seed": 3}, "horizon": 1000.0, "dt": 1000.0}}"#,
    );
    let out = kinetic(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
