use std::path::Path;
use std::process::{Command, Output};

fn bscahn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bscahn"))
        .args(args)
        .current_dir(dir)
        .env_remove("BSCAHN_MAX_LEVEL")
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn evolve_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[mesh]\nlevel = 1\n[run]\nt_final = 0.01\nsnapshot_every = 5\n[scheme]\ndt = 0.001\n[initial]\ngenerator = \"random\"\nseed = 3\n",
    )
    .unwrap();
    let out = bscahn(
        &["evolve", "--config", "run.toml", "--out", "o"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = dir.path().join("o");
    let s = summary(&o);
    assert_eq!(s["experiment"], "evolve");
    assert_eq!(s["passed"], true);
    assert_eq!(s["config"]["mesh.level"], 1);
    let csv = std::fs::read_to_string(o.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert!(std::fs::read_dir(o.join("snapshots")).unwrap().any(|e| e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .ends_with(".vtk")));
}

#[test]
fn level_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[run]\nt_final = 0.0\n").unwrap();
    let out = bscahn(
        &[
            "evolve", "--config", "run.toml", "--level", "2", "--seed", "9",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s = summary(&dir.path().join("out"));
    assert_eq!(s["config"]["mesh.level"], 2);
    assert_eq!(s["config"]["initial.seed"], 9);
}

#[test]
fn level_above_cap_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bscahn"))
        .args(["evolve", "--level", "3"])
        .current_dir(dir.path())
        .env("BSCAHN_MAX_LEVEL", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("level"));
}

#[test]
fn bad_config_reports_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[model]\nK = -1.0\n").unwrap();
    let out = bscahn(&["evolve", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.K"));

    std::fs::write(dir.path().join("typo.toml"), "[scheme]\ndtt = 0.1\n").unwrap();
    let out = bscahn(&["evolve", "--config", "typo.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scheme.dtt"));
}

#[test]
fn verify_and_elliptic_pass() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("suite.toml"),
        "[suite]\nlevels = [2, 3]\nsamples = 5\n[elliptic]\nlevels = [2, 3, 4]\nvariable_mobility = true\n",
    )
    .unwrap();
    let out = bscahn(
        &["verify", "--config", "suite.toml", "--out", "v"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(summary(&dir.path().join("v"))["experiment"], "verify");

    let out = bscahn(
        &["elliptic", "--config", "suite.toml", "--out", "e"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let order = summary(&dir.path().join("e"))["results"]["order"]
        .as_f64()
        .unwrap();
    assert!((1.8..=2.2).contains(&order), "{order}");
}
