//! Scenario files, experiment orchestration and artifact output.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::chattering_amplitude;
use crate::calibration::{calibrate, CalibrationConfig, CalibrationReport};
use crate::dynamic_control::{run_dynamic, DynamicConfig, DynamicTrace};
use crate::error::{Error, Result};
use crate::model::{InfluenceKind, InfluenceMatrix, InputVector, SwitchVector, TargetSpec};
use crate::optimizer::{brute_force, combined_search, GaParams, SearchSpace};
use crate::plant::{make_reference_plant, FaultState, LoadState, PlantModel, PresetName};
use crate::rng::{stream, Streams};
use crate::schedule::{EventTime, FaultEvent, LoadEvent, Schedule};
use crate::static_control::{box_target, run_static, StaticConfig, StaticTrace, Termination};
use crate::svg::{Plot, Series};
use crate::trajectory::Trajectory;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
/// Largest actuator count for which the benchmark computes the `2^m` oracle.
pub const ORACLE_MAX_M: usize = 12;

const BUNDLED: [(&str, &str, &str); 6] = [
    (
        "table1_analogue",
        "three cost functions on three translation-only targets",
        include_str!("../scenarios/table1_analogue.json"),
    ),
    (
        "perturbation",
        "load attached after the third correction, targets continue under load",
        include_str!("../scenarios/perturbation.json"),
    ),
    (
        "table2_analogue",
        "static control with 0 to 10 stuck-open actuators, undetected and detected",
        include_str!("../scenarios/table2_analogue.json"),
    ),
    (
        "dynamic_step",
        "sliding-mode step response on the linear plant",
        include_str!("../scenarios/dynamic_step.json"),
    ),
    (
        "dynamic_tracking",
        "circle tracking with 0, 4, 7, 10 and 14 stuck actuators",
        include_str!("../scenarios/dynamic_tracking.json"),
    ),
    (
        "dynamic_5hz",
        "circle tracking at a 5 Hz control rate (heavy chattering)",
        include_str!("../scenarios/dynamic_5hz.json"),
    ),
];

/// Names and one-line descriptions of the bundled scenarios.
pub fn bundled_scenarios() -> Vec<(&'static str, &'static str)> {
    BUNDLED.iter().map(|(n, d, _)| (*n, *d)).collect()
}

pub fn bundled_scenario_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _, _)| *n == name).map(|(_, _, t)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Master seed for every random stream.
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSource,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub schedule: ScenarioSchedule,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PlantSource {
    Preset {
        preset: String,
        /// Defaults to the master seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    File {
        file: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Static {
        #[serde(default)]
        config: Value,
        targets: TargetsSpec,
        #[serde(default)]
        variants: Vec<Variant>,
    },
    Dynamic {
        #[serde(default)]
        config: Value,
        trajectory: TrajectorySpec,
        #[serde(default)]
        variants: Vec<Variant>,
    },
}

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::Static { .. } => "static",
            ControllerSpec::Dynamic { .. } => "dynamic",
        }
    }

    fn variants(&self) -> &[Variant] {
        match self {
            ControllerSpec::Static { variants, .. } | ControllerSpec::Dynamic { variants, .. } => variants,
        }
    }
}

/// A named override of the base controller config and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    /// Fields merged over the base config.
    #[serde(default)]
    pub config: Value,
    /// Events added to the base schedule.
    #[serde(default)]
    pub schedule: ScenarioSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetsSpec {
    /// Steady states of random inputs, so every target is reachable.
    Random {
        count: usize,
        tolerance: f64,
        weights: Vec<f64>,
    },
    List(Vec<TargetEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub x_d: Vec<f64>,
    pub tolerance: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Explicit(Trajectory),
    /// Hold at the steady state of a random input (a reachable step).
    RandomStep {},
    /// Circle about the centre of the linear workspace.
    WorkspaceCircle {
        radius: f64,
        period: f64,
        dofs: [usize; 2],
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSchedule {
    pub faults: Vec<FaultEvent>,
    pub loads: Vec<ScenarioLoad>,
}

/// Load given either as a force or as the static displacement it causes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioLoad {
    pub at: EventTime,
    #[serde(default)]
    pub f_ext: Option<Vec<f64>>,
    #[serde(default)]
    pub displacement: Option<Vec<f64>>,
}

impl ScenarioSchedule {
    fn resolve(&self, plant: &PlantModel) -> Result<Schedule> {
        let n = plant.n();
        let mut loads = Vec::with_capacity(self.loads.len());
        for l in &self.loads {
            let f_ext = match (&l.f_ext, &l.displacement) {
                (Some(f), None) => f.clone(),
                (None, Some(d)) => {
                    Error::check_dim("load displacement", n, d.len())?;
                    (plant.stiffness() * DVector::from_column_slice(d)).iter().copied().collect()
                }
                _ => return Err(Error::validation("a load needs exactly one of f_ext or displacement")),
            };
            loads.push(LoadEvent { at: l.at, f_ext });
        }
        let sched = Schedule {
            faults: self.faults.clone(),
            loads,
        };
        sched.validate(n, plant.m())?;
        Ok(sched)
    }
}

fn merge(base: &Value, overlay: &Value) -> Value {
    match (base, overlay) {
        (Value::Object(a), Value::Object(b)) => {
            let mut out = a.clone();
            for (k, v) in b {
                let merged = match out.get(k) {
                    Some(existing) => merge(existing, v),
                    None => v.clone(),
                };
                out.insert(k.clone(), merged);
            }
            Value::Object(out)
        }
        (_, Value::Null) => base.clone(),
        _ => overlay.clone(),
    }
}

fn config_from<T: for<'de> Deserialize<'de>>(base: &Value, overlay: &Value, what: &str) -> Result<T> {
    let merged = merge(&normalise(base), &normalise(overlay));
    serde_json::from_value(merged).map_err(|e| Error::validation(format!("{what}: {e}")))
}

fn normalise(v: &Value) -> Value {
    if v.is_null() {
        Value::Object(Default::default())
    } else {
        v.clone()
    }
}

impl Scenario {
    /// Parses and checks the document shape. Plant-dependent checks happen
    /// in [`prepare`].
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)?;
        if sc.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported scenario schema_version {} (expected {SCENARIO_SCHEMA_VERSION})",
                sc.schema_version
            )));
        }
        if sc.id.is_empty() || !sc.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::validation("scenario id must be non-empty ASCII letters, digits, '_' or '-'"));
        }
        let mut names = BTreeSet::new();
        for v in sc.controller.variants() {
            if v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::validation(format!("invalid variant name {:?}", v.name)));
            }
            if !names.insert(v.name.clone()) {
                return Err(Error::validation(format!("duplicate variant name {:?}", v.name)));
            }
        }
        sc.calibration.validate()?;
        Ok(sc)
    }

    /// Loads a scenario from a file, or a bundled scenario by name.
    pub fn load(path_or_name: &str) -> Result<(Self, Option<PathBuf>)> {
        let path = Path::new(path_or_name);
        if path.exists() {
            let text = fs::read_to_string(path)?;
            let sc = Self::from_json(&text)?;
            return Ok((sc, path.parent().map(Path::to_path_buf)));
        }
        match bundled_scenario_text(path_or_name) {
            Some(text) => Ok((Self::from_json(text)?, None)),
            None => Err(Error::validation(format!(
                "no scenario file or bundled scenario named {path_or_name:?}"
            ))),
        }
    }
}

/// Builds the plant for a scenario. Relative plant files resolve against `base_dir`.
pub fn build_plant(source: &PlantSource, master_seed: u64, base_dir: Option<&Path>) -> Result<PlantModel> {
    match source {
        PlantSource::Preset { preset, seed } => {
            PresetName::parse(preset).map_err(|e| Error::validation(e.to_string()))?;
            make_reference_plant(preset, seed.unwrap_or(master_seed))
        }
        PlantSource::File { file } => {
            let p = Path::new(file);
            let full = match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p.to_path_buf(),
            };
            let text = fs::read_to_string(&full)
                .map_err(|e| Error::validation(format!("cannot read plant file {}: {e}", full.display())))?;
            PlantModel::from_json(&text)
        }
    }
}

/// Reachable random targets: steady states of random inputs drawn from the
/// `targets` stream of `seed`.
pub fn random_targets(plant: &PlantModel, count: usize, tolerance: f64, weights: &[f64], seed: u64) -> Result<Vec<TargetSpec>> {
    let mut rng = stream(seed, "targets");
    let (n, m) = (plant.n(), plant.m());
    let none = FaultState::none();
    let load = LoadState::zero(n);
    (0..count)
        .map(|_| {
            let u = InputVector::from_bools((0..m).map(|_| rng.random_bool(0.5)).collect());
            let x = plant.steady_state_exact(&u, &none, &load)?;
            box_target(x, tolerance, weights.to_vec())
        })
        .collect()
}

/// Centre of the linear workspace: every actuator at half stroke.
pub fn workspace_center(plant: &PlantModel) -> DVector<f64> {
    plant.x_rest() + plant.displacement_map().column_sum() * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub target: String,
    pub n_f: usize,
    pub final_error: f64,
    pub mean_error: f64,
    pub max_error: f64,
    pub on_target: Option<bool>,
    pub termination: String,
    pub switch_activity: usize,
    pub sim_time: f64,
}

#[derive(Debug, Clone)]
pub enum VariantTrace {
    Static(StaticTrace),
    Dynamic(DynamicTrace),
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub name: String,
    pub trace: VariantTrace,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub seed: u64,
    pub calibration: CalibrationReport,
    pub variants: Vec<VariantResult>,
    pub summary: Vec<SummaryRow>,
    pub calibration_seconds: f64,
}

impl ScenarioRun {
    /// First runtime abort among the variants.
    pub fn abort(&self) -> Option<String> {
        self.variants.iter().find_map(|v| {
            let a = match &v.trace {
                VariantTrace::Static(t) => t.abort.as_ref(),
                VariantTrace::Dynamic(t) => t.abort.as_ref(),
            };
            a.map(|msg| format!("variant {}: {msg}", v.name))
        })
    }
}

enum Job {
    Static {
        config: StaticConfig,
        schedule: Schedule,
    },
    Dynamic {
        config: DynamicConfig,
        schedule: Schedule,
    },
}

/// Runs a scenario end to end in memory. `seed` overrides the scenario seed.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>, base_dir: Option<&Path>) -> Result<ScenarioRun> {
    let seed = seed.unwrap_or(scenario.seed);
    let plant = build_plant(&scenario.plant, seed, base_dir)?;
    let (n, m) = (plant.n(), plant.m());
    let base_schedule = scenario.schedule.resolve(&plant)?;

    let variants: Vec<Variant> = if scenario.controller.variants().is_empty() {
        vec![Variant {
            name: "base".into(),
            config: Value::Null,
            schedule: ScenarioSchedule::default(),
        }]
    } else {
        scenario.controller.variants().to_vec()
    };

    let mut jobs = Vec::with_capacity(variants.len());
    let mut targets = Vec::new();
    let mut trajectory = None;
    match &scenario.controller {
        ControllerSpec::Static { config, targets: spec, .. } => {
            targets = match spec {
                TargetsSpec::Random { count, tolerance, weights } => {
                    if *count == 0 {
                        return Err(Error::validation("random targets need count >= 1"));
                    }
                    Error::check_dim("target weights", n, weights.len()).map_err(|e| Error::validation(e.to_string()))?;
                    random_targets(&plant, *count, *tolerance, weights, seed)?
                }
                TargetsSpec::List(list) => {
                    if list.is_empty() {
                        return Err(Error::validation("target list is empty"));
                    }
                    list.iter()
                        .map(|t| box_target(DVector::from_column_slice(&t.x_d), t.tolerance, t.weights.clone()))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| Error::validation(format!("target: {e}")))?
                }
            };
            for v in &variants {
                let config: StaticConfig = config_from(config, &v.config, &format!("variant {}", v.name))?;
                config.validate(m).map_err(|e| Error::validation(format!("variant {}: {e}", v.name)))?;
                let schedule = base_schedule.merged(&v.schedule.resolve(&plant)?);
                jobs.push(Job::Static { config, schedule });
            }
        }
        ControllerSpec::Dynamic { config, trajectory: spec, .. } => {
            let traj = match spec {
                TrajectorySpec::Explicit(t) => t.clone(),
                TrajectorySpec::RandomStep {} => {
                    let t = random_targets(&plant, 1, 1.0, &vec![1.0; n], seed)?;
                    Trajectory::hold(t[0].x_d().vector().clone())
                }
                TrajectorySpec::WorkspaceCircle { radius, period, dofs, phase } => Trajectory::Circle {
                    center: workspace_center(&plant).iter().copied().collect(),
                    radius: *radius,
                    period: *period,
                    dofs: *dofs,
                    phase: *phase,
                },
            };
            traj.validate(n)?;
            trajectory = Some(traj);
            for v in &variants {
                let config: DynamicConfig = config_from(config, &v.config, &format!("variant {}", v.name))?;
                config.validate(n, m).map_err(|e| Error::validation(format!("variant {}: {e}", v.name)))?;
                let schedule = base_schedule.merged(&v.schedule.resolve(&plant)?);
                jobs.push(Job::Dynamic { config, schedule });
            }
        }
    }

    let t0 = Instant::now();
    let calibration = calibrate(&plant, &scenario.calibration, &mut stream(seed, "calibration"))?;
    let calibration_seconds = t0.elapsed().as_secs_f64();

    // variants share nothing, so they run side by side
    let results: Vec<Result<VariantResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .zip(&variants)
            .map(|(job, v)| {
                let (plant, calibration, targets, trajectory) = (&plant, &calibration, &targets, &trajectory);
                scope.spawn(move || -> Result<VariantResult> {
                    let start = Instant::now();
                    let trace = match job {
                        Job::Static { config, schedule } => VariantTrace::Static(run_static(
                            plant,
                            calibration,
                            targets,
                            config,
                            schedule,
                            None,
                            &mut Streams::from_master(seed),
                        )?),
                        Job::Dynamic { config, schedule } => VariantTrace::Dynamic(run_dynamic(
                            plant,
                            calibration,
                            trajectory.as_ref().expect("dynamic scenario has a trajectory"),
                            config,
                            schedule,
                            &mut stream(seed, "noise"),
                        )?),
                    };
                    Ok(VariantResult {
                        name: v.name.clone(),
                        trace,
                        wall_seconds: start.elapsed().as_secs_f64(),
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("variant thread panicked")).collect()
    });
    let variants = results.into_iter().collect::<Result<Vec<_>>>()?;

    let summary = variants.iter().flat_map(summary_rows).collect();
    Ok(ScenarioRun {
        scenario: scenario.clone(),
        seed,
        calibration,
        variants,
        summary,
        calibration_seconds,
    })
}

fn summary_rows(v: &VariantResult) -> Vec<SummaryRow> {
    match &v.trace {
        VariantTrace::Static(trace) => trace
            .outcomes
            .iter()
            .map(|o| {
                let errs = o.error_norms();
                SummaryRow {
                    variant: v.name.clone(),
                    target: o.target_index.to_string(),
                    n_f: o.n_f,
                    final_error: o.final_error,
                    mean_error: mean(&errs),
                    max_error: errs.iter().copied().fold(f64::NAN, f64::max),
                    on_target: Some(o.on_target),
                    termination: o.termination.as_str().to_string(),
                    switch_activity: o.switch_activity,
                    sim_time: o.sim_time_end - o.sim_time_start,
                }
            })
            .collect(),
        VariantTrace::Dynamic(trace) => {
            let errs = trace.error_norms();
            vec![SummaryRow {
                variant: v.name.clone(),
                target: "trajectory".into(),
                n_f: trace.ticks.len(),
                final_error: errs.last().copied().unwrap_or(f64::NAN),
                mean_error: mean(&errs),
                max_error: errs.iter().copied().fold(f64::NAN, f64::max),
                on_target: None,
                termination: if trace.abort.is_some() { "aborted" } else { "completed" }.into(),
                switch_activity: trace.switch_activity(),
                sim_time: trace.ticks.last().map_or(0.0, |t| t.t),
            }]
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn write_summary_csv<W: Write>(scenario_id: &str, rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "variant",
        "target",
        "n_f",
        "final_error",
        "mean_error",
        "max_error",
        "on_target",
        "termination",
        "switch_activity",
        "sim_time",
    ])?;
    for r in rows {
        w.write_record([
            scenario_id.to_string(),
            r.variant.clone(),
            r.target.clone(),
            r.n_f.to_string(),
            format!("{:.6}", r.final_error),
            format!("{:.6}", r.mean_error),
            format!("{:.6}", r.max_error),
            r.on_target.map_or(String::new(), |b| b.to_string()),
            r.termination.clone(),
            r.switch_activity.to_string(),
            format!("{:.3}", r.sim_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every artifact of a run into `dir` and returns the written paths.
/// Everything except `run.json` (wall-clock timings) is a pure function of
/// the scenario and seed.
pub fn write_artifacts(run: &ScenarioRun, dir: &Path, plot: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };

    let mut buf = Vec::new();
    write_summary_csv(&run.scenario.id, &run.summary, &mut buf)?;
    put("summary.csv".into(), buf)?;
    put("calibration.json".into(), run.calibration.to_json().into_bytes())?;
    let mut buf = Vec::new();
    run.calibration.write_dispersion_csv(&mut buf)?;
    put("dispersion.csv".into(), buf)?;

    for v in &run.variants {
        match &v.trace {
            VariantTrace::Static(trace) => {
                for o in &trace.outcomes {
                    let mut buf = Vec::new();
                    o.write_csv(&mut buf)?;
                    put(format!("trace_{}_target{}.csv", v.name, o.target_index), buf)?;
                }
                if plot {
                    put(format!("error_{}.svg", v.name), static_error_plot(&v.name, trace).to_svg().into_bytes())?;
                }
            }
            VariantTrace::Dynamic(trace) => {
                let mut buf = Vec::new();
                trace.write_csv(&mut buf)?;
                put(format!("trace_{}.csv", v.name), buf)?;
                if plot {
                    let (path, err) = dynamic_plots(&v.name, trace);
                    put(format!("path_{}.svg", v.name), path.to_svg().into_bytes())?;
                    put(format!("error_{}.svg", v.name), err.to_svg().into_bytes())?;
                }
            }
        }
    }

    let timing = serde_json::json!({
        "scenario": run.scenario.id,
        "seed": run.seed,
        "calibration_wall_seconds": run.calibration_seconds,
        "variants": run.variants.iter().map(|v| serde_json::json!({
            "name": v.name,
            "wall_seconds": v.wall_seconds,
        })).collect::<Vec<_>>(),
    });
    put("run.json".into(), serde_json::to_string_pretty(&timing)?.into_bytes())?;
    Ok(written)
}

fn static_error_plot(name: &str, trace: &StaticTrace) -> Plot {
    let mut pts = Vec::new();
    let mut tol = Vec::new();
    for o in &trace.outcomes {
        let base = o.records.first().map_or(0, |r| r.global_iteration);
        for (i, e) in o.error_norms().into_iter().enumerate() {
            pts.push(((base + i) as f64, e));
        }
        let t = o.target.weighted_norm(o.target.tolerance());
        tol.push((base as f64, t));
        tol.push(((base + o.n_f) as f64, t));
        pts.push((f64::NAN, f64::NAN));
        tol.push((f64::NAN, f64::NAN));
    }
    Plot {
        title: format!("static error, {name}"),
        x_label: "correction".into(),
        y_label: "weighted error".into(),
        series: vec![Series::new("error", pts), Series::new("tolerance", tol)],
        equal_aspect: false,
    }
}

fn dynamic_plots(name: &str, trace: &DynamicTrace) -> (Plot, Plot) {
    let dofs: Vec<usize> = (0..trace.weights.len()).filter(|&i| trace.weights[i] > 0.0).take(2).collect();
    let (a, b) = match dofs.as_slice() {
        [a, b] => (*a, *b),
        [a] => (*a, *a),
        _ => (0, 0),
    };
    let desired = trace.ticks.iter().map(|t| (t.x_d[a], t.x_d[b])).collect();
    let actual = trace.ticks.iter().map(|t| (t.x[a], t.x[b])).collect();
    let path = Plot {
        title: format!("path, {name}"),
        x_label: format!("x_{a}"),
        y_label: format!("x_{b}"),
        series: vec![Series::new("desired", desired), Series::new("measured", actual)],
        equal_aspect: true,
    };
    let err = Plot {
        title: format!("tracking error, {name}"),
        x_label: "t [s]".into(),
        y_label: "weighted error".into(),
        series: vec![Series::new(
            "error",
            trace.times().into_iter().zip(trace.error_norms()).collect(),
        )],
        equal_aspect: false,
    };
    (path, err)
}

/// Chattering amplitude over the last `window` seconds of a dynamic trace.
pub fn tail_chattering(trace: &DynamicTrace, window: f64) -> f64 {
    let end = trace.ticks.last().map_or(0.0, |t| t.t);
    chattering_amplitude(trace, end - window)
}

/// True when the run stopped on tolerance.
pub fn converged(t: Termination) -> bool {
    t == Termination::Converged
}

// ---------------------------------------------------------------------------
// optimizer benchmark

/// One benchmark instance: random influence matrix (4 DOFs) and desired
/// correction, scored by residual norm plus 0.2 per switch.
pub fn bench_instance(m: usize, seed: u64, index: usize) -> (InfluenceMatrix, DVector<f64>) {
    let mut rng = stream(seed.wrapping_add(index as u64), &format!("bench_m{m}"));
    let mut normal = |s: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        s * z
    };
    let j = DMatrix::from_fn(4, m, |_, _| normal(3.0));
    let x_e = DVector::from_fn(4, |_, _| normal(6.0));
    (InfluenceMatrix::new(j, InfluenceKind::Displacement).expect("finite"), x_e)
}

pub fn bench_cost<'a>(j: &'a InfluenceMatrix, x_e: &'a DVector<f64>) -> impl Fn(&SwitchVector) -> f64 + Sync + 'a {
    move |b: &SwitchVector| {
        crate::model::residual(j, b, x_e).expect("dimensions match").norm() + 0.2 * b.switch_count() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub m: usize,
    pub instance: usize,
    pub cost: f64,
    pub switches: usize,
    pub evaluations: u64,
    pub source: String,
    pub seconds: f64,
    pub oracle_cost: Option<f64>,
    pub oracle_switches: Option<usize>,
}

impl BenchRow {
    pub fn gap(&self) -> Option<f64> {
        self.oracle_cost.map(|o| self.cost / o - 1.0)
    }
}

pub fn bench_optimizer(sizes: &[usize], instances: usize, seed: u64, oracle: bool) -> Result<Vec<BenchRow>> {
    if oracle {
        if let Some(&m) = sizes.iter().find(|&&m| m > ORACLE_MAX_M) {
            return Err(Error::validation(format!(
                "m = {m} exceeds the oracle cap of {ORACLE_MAX_M}; pass --no-oracle for costs and timings only"
            )));
        }
    }
    if sizes.contains(&0) {
        return Err(Error::validation("actuator counts must be positive"));
    }
    let params = GaParams::default();
    let mut rows = Vec::with_capacity(sizes.len() * instances);
    for &m in sizes {
        let space = SearchSpace::full(m);
        let mut rng = stream(seed, &format!("bench_search_m{m}"));
        for i in 0..instances {
            let (j, x_e) = bench_instance(m, seed, i);
            let cost = bench_cost(&j, &x_e);
            let start = Instant::now();
            let r = combined_search(&cost, &space, &params, &mut rng)?;
            let seconds = start.elapsed().as_secs_f64();
            let (oracle_cost, oracle_switches) = if oracle {
                let o = brute_force(&cost, &space)?;
                (Some(o.best_cost), Some(o.best_b.switch_count()))
            } else {
                (None, None)
            };
            rows.push(BenchRow {
                m,
                instance: i,
                cost: r.best_cost,
                switches: r.best_b.switch_count(),
                evaluations: r.evaluations,
                source: r.source.as_str().into(),
                seconds,
                oracle_cost,
                oracle_switches,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "m",
        "instance",
        "cost",
        "s_n",
        "evaluations",
        "source",
        "seconds",
        "oracle_cost",
        "oracle_s_n",
        "gap",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.instance.to_string(),
            format!("{:.9}", r.cost),
            r.switches.to_string(),
            r.evaluations.to_string(),
            r.source.clone(),
            format!("{:.6}", r.seconds),
            opt(r.oracle_cost.map(|c| format!("{c:.9}"))),
            opt(r.oracle_switches.map(|s| s.to_string())),
            opt(r.gap().map(|g| format!("{g:.9}"))),
        ])?;
    }
    w.flush()?;
    Ok(())
}
