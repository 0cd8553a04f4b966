use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ivctl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivctl")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn list_presets_names_bundled_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let o = ivctl(&["list-presets"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["nonlinear20x4", "table1_analogue", "dynamic_tracking", "dynamic_5hz"] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn static_run_writes_artifacts_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let o = ivctl(&["static", "--scenario", "table1_analogue", "--out", "res", "--plot"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("res");
    for f in ["summary.csv", "calibration.json", "dispersion.csv", "run.json", "trace_penalized_target0.csv", "error_residual.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 9);
}

#[test]
fn reruns_are_byte_identical_and_seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    for (out, seed) in [("a", "4"), ("b", "4"), ("c", "5")] {
        let o = ivctl(&["dynamic", "--scenario", "dynamic_step", "--seed", seed, "--out", out], dir.path());
        assert_eq!(code(&o), 0);
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("trace_base.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn validation_failures_exit_2_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\n  \"schema_version\": 1,\n  \"id\": \"bad\",\n  \"colour\": 1\n}\n").unwrap();
    let o = ivctl(&["static", "--scenario", "bad.json"], dir.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 4"), "{err}");

    // controller kind mismatch
    let o = ivctl(&["static", "--scenario", "dynamic_step"], dir.path());
    assert_eq!(code(&o), 2);
    // unknown scenario
    let o = ivctl(&["dynamic", "--scenario", "no_such_thing"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_abort_exits_3_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let sc = r#"{"schema_version": 1, "id": "boom", "plant": {"preset": "linear20x4"},
      "controller": {"kind": "static", "targets": {"random": {"count": 3, "tolerance": 1, "weights": [1, 1, 0, 0]}}},
      "schedule": {"loads": [{"at": {"iteration": 1}, "f_ext": [1e308, 1e308, 1e308, 1e308]}]}}"#;
    fs::write(dir.path().join("boom.json"), sc).unwrap();
    let o = ivctl(&["static", "--scenario", "boom.json", "--out", "o"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("o/summary.csv").exists());
    assert!(dir.path().join("o/trace_base_target0.csv").exists());
}

#[test]
fn bench_requires_no_oracle_above_twelve() {
    let dir = tempfile::tempdir().unwrap();
    let o = ivctl(&["bench-optimizer", "--sizes", "20", "--instances", "2"], dir.path());
    assert_eq!(code(&o), 2);
    let o = ivctl(&["bench-optimizer", "--sizes", "20", "--instances", "2", "--no-oracle", "--out", "b.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let o = ivctl(&["bench-optimizer", "--sizes", "8", "--instances", "3"], dir.path());
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("m,instance,cost"));
}

#[test]
fn calibrate_writes_plant_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = ivctl(&["calibrate", "--plant", "nonlinear12x3", "--seed", "2", "--out", "cal"], dir.path());
    assert_eq!(code(&o), 0);
    for f in ["plant.json", "calibration.json", "dispersion.csv"] {
        assert!(dir.path().join("cal").join(f).exists());
    }
    // the exported plant is accepted back as a plant file
    let o = ivctl(&["calibrate", "--plant", "cal/plant.json", "--out", "cal2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ivctl(&["calibrate", "--plant", "bogus5x5"], dir.path());
    assert_eq!(code(&o), 2);
}
