use std::fs;

use ivctl::harness::{bundled_scenario_text, run_scenario, write_artifacts, Scenario, VariantTrace};
use ivctl::{make_reference_plant, Error};

fn scenario(text: &str) -> Scenario {
    Scenario::from_json(text).unwrap()
}

#[test]
fn plant_files_resolve_relative_to_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let plant = make_reference_plant("linear8x2", 4).unwrap();
    fs::create_dir(dir.path().join("plants")).unwrap();
    fs::write(dir.path().join("plants/p.json"), plant.to_json()).unwrap();
    let text = r#"{
      "schema_version": 1, "id": "from_file", "seed": 3,
      "plant": {"file": "plants/p.json"},
      "controller": {"kind": "static", "config": {"max_iterations": 5},
        "targets": {"random": {"count": 2, "tolerance": 0.5, "weights": [1, 1]}}}
    }"#;
    let path = dir.path().join("sc.json");
    fs::write(&path, text).unwrap();
    let (sc, base) = Scenario::load(path.to_str().unwrap()).unwrap();
    let run = run_scenario(&sc, None, base.as_deref()).unwrap();
    assert_eq!(run.summary.len(), 2);
    // linear, noise-free and reachable: every target converges
    assert!(run.summary.iter().all(|r| r.on_target == Some(true)));
    // without the base directory the relative path does not resolve
    assert!(matches!(run_scenario(&sc, None, None), Err(Error::Validation { .. })));
}

#[test]
fn variants_override_the_base_config() {
    let sc = scenario(bundled_scenario_text("table1_analogue").unwrap());
    let run = run_scenario(&sc, None, None).unwrap();
    let names: Vec<_> = run.variants.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["residual", "penalized", "probabilistic"]);
    // the residual cost ignores switch count, so it toggles more actuators
    let activity = |name: &str| -> usize { run.summary.iter().filter(|r| r.variant == name).map(|r| r.switch_activity).sum() };
    assert!(activity("residual") > activity("penalized"));
}

#[test]
fn seed_override_changes_results_and_is_reported() {
    let sc = scenario(bundled_scenario_text("perturbation").unwrap());
    let a = run_scenario(&sc, None, None).unwrap();
    let b = run_scenario(&sc, Some(77), None).unwrap();
    assert_eq!(a.seed, 1);
    assert_eq!(b.seed, 77);
    assert_ne!(a.summary, b.summary);
}

#[test]
fn semantic_errors_are_reported_before_running() {
    let bad_weights = r#"{"schema_version": 1, "id": "w", "plant": {"preset": "linear8x2"},
      "controller": {"kind": "static", "targets": {"random": {"count": 1, "tolerance": 1, "weights": [1, 1, 1]}}}}"#;
    assert!(matches!(run_scenario(&scenario(bad_weights), None, None), Err(Error::Validation { .. })));

    let bad_config = r#"{"schema_version": 1, "id": "c", "plant": {"preset": "linear8x2"},
      "controller": {"kind": "dynamic", "config": {"control_period": 0.015, "substep": 0.01},
        "trajectory": {"random_step": {}}}}"#;
    assert!(run_scenario(&scenario(bad_config), None, None).is_err());

    let unknown_field = r#"{"schema_version": 1, "id": "u", "plant": {"preset": "linear8x2"},
      "controller": {"kind": "static", "config": {"max_iteration": 3},
        "targets": {"random": {"count": 1, "tolerance": 1, "weights": [1, 1]}}}}"#;
    let err = run_scenario(&scenario(unknown_field), None, None).unwrap_err();
    assert!(err.to_string().contains("max_iteration"), "{err}");

    let dup = r#"{"schema_version": 1, "id": "d", "plant": {"preset": "linear8x2"},
      "controller": {"kind": "static", "targets": {"random": {"count": 1, "tolerance": 1, "weights": [1, 1]}},
        "variants": [{"name": "a"}, {"name": "a"}]}}"#;
    assert!(Scenario::from_json(dup).is_err());
}

#[test]
fn divergence_aborts_with_partial_artifacts() {
    let text = r#"{"schema_version": 1, "id": "boom", "seed": 1, "plant": {"preset": "linear20x4"},
      "controller": {"kind": "dynamic", "config": {"duration": 2.0}, "trajectory": {"random_step": {}}},
      "schedule": {"loads": [{"at": {"time": 0.5}, "f_ext": [1e308, 1e308, 1e308, 1e308]}]}}"#;
    let run = run_scenario(&scenario(text), None, None).unwrap();
    let msg = run.abort().expect("run should abort");
    assert!(msg.contains("diverged"), "{msg}");
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&run, dir.path(), true).unwrap();
    let trace = fs::read_to_string(dir.path().join("trace_base.csv")).unwrap();
    // header plus the ticks up to the load
    assert_eq!(trace.lines().count(), 1 + 51);
    assert!(fs::read_to_string(dir.path().join("summary.csv")).unwrap().contains("aborted"));
    assert!(dir.path().join("path_base.svg").exists());
}

#[test]
fn displacement_loads_convert_through_the_stiffness() {
    let sc = scenario(bundled_scenario_text("perturbation").unwrap());
    let run = run_scenario(&sc, None, None).unwrap();
    let loaded = run.variants.iter().find(|v| v.name == "load").unwrap();
    let VariantTrace::Static(tr) = &loaded.trace else { panic!() };
    let fired = tr.outcomes.iter().flat_map(|o| o.records.iter()).filter(|r| r.events.iter().any(|e| e == "load")).count()
        + tr.outcomes.iter().filter(|o| o.final_events.iter().any(|e| e == "load")).count();
    assert_eq!(fired, 1);
}
