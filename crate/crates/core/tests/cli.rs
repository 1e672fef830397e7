use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_teugels-control");

fn default_scenario() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.scn")
}

fn run(args: &[&str], scenario: &Path, out: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--scenario").arg(scenario);
    if let Some(o) = out {
        cmd.arg("--out").arg(o);
    }
    cmd.env_remove("TEUGELS_CONTROL_OUT");
    cmd.output().expect("binary runs")
}

/// The default scenario with smaller ensembles.
fn small_scenario(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(default_scenario())
        .unwrap()
        .replace("paths = 100000", "paths = 2000")
        .replace("paths = 20000", "paths = 4000");
    let path = dir.join("small.scn");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn compare_on_the_linear_benchmark_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("compare");
    let o = run(&["compare"], &default_scenario(), Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with(",true")));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "compare");
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 3);
}

#[test]
fn zero_paths_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(default_scenario())
        .unwrap()
        .replace("paths = 100000", "paths = 0");
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, text).unwrap();
    let o = run(&["simulate"], &bad, Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paths.paths"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path());
    for sub in ["basis", "simulate", "bsde", "value-mc", "hjb"] {
        let (a, b) = (dir.path().join(format!("{sub}-a")), dir.path().join(format!("{sub}-b")));
        assert!(run(&[sub], &sc, Some(&a)).status.success(), "{sub}");
        assert!(run(&[sub, "--workers", "2"], &sc, Some(&b)).status.success(), "{sub}");
        let ma: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
        let mb: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(ma["outputs"], mb["outputs"], "{sub}");
        assert_eq!(ma["scenario_digest"], mb["scenario_digest"]);
        for name in ma["outputs"].as_object().unwrap().keys() {
            assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        }
    }
}

#[test]
fn environment_names_the_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(default_scenario()).unwrap();
    let sc = dir.path().join("s.scn");
    std::fs::write(&sc, text).unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(BIN)
        .args(["basis", "--scenario"])
        .arg(&sc)
        .env("TEUGELS_CONTROL_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("basis.csv").exists());
}

#[test]
fn missing_sections_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = std::fs::read_to_string(default_scenario())
        .unwrap()
        .split("[lattice]")
        .next()
        .unwrap()
        .to_string();
    let sc = dir.path().join("short.scn");
    std::fs::write(&sc, text).unwrap();
    let o = run(&["value-mc"], &sc, Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[lattice]") && err.contains("[mc]"), "{err}");
}
