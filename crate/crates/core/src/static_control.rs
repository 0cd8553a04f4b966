//! Iterative point-to-point controller: read the steady state, plan a switch
//! vector, toggle, wait, repeat.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationReport;
use crate::cost::{convergence_probability, on_target_probability, CorrectionCost, CostKind};
use crate::error::{Error, Result};
use crate::model::{
    apply_switch, residual, superpose, updated_jacobian, DispersionModel, InfluenceMatrix, InputVector,
    Linearizer, StateVector, SwitchVector, TargetSpec,
};
use crate::optimizer::{combined_search, CostFunction, GaParams, SearchSpace, SearchStage};
use crate::plant::PlantModel;
use crate::rng::Streams;
use crate::schedule::{Schedule, ScheduleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once every weighted DOF is within tolerance.
    #[default]
    ToleranceMet,
    /// Tolerance rule plus a guard that stops when the chosen correction is
    /// unlikely to reduce the error.
    ConvergenceProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticConfig {
    pub cost_kind: CostKind,
    pub penalty_beta: f64,
    pub max_iterations: usize,
    pub stop_rule: StopRule,
    pub p_conv_min: f64,
    /// Simulated seconds waited after each correction.
    pub settle_time: f64,
    pub excluded_actuators: BTreeSet<usize>,
    pub optimizer: GaParams,
}

impl Default for StaticConfig {
    fn default() -> Self {
        StaticConfig {
            cost_kind: CostKind::Penalized,
            penalty_beta: 0.2,
            max_iterations: 15,
            stop_rule: StopRule::ToleranceMet,
            p_conv_min: 0.5,
            settle_time: 3.0,
            excluded_actuators: BTreeSet::new(),
            optimizer: GaParams::default(),
        }
    }
}

impl StaticConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.penalty_beta >= 0.0 && self.penalty_beta.is_finite()) {
            return Err(Error::Config("penalty_beta must be finite and non-negative".into()));
        }
        if !(self.p_conv_min > 0.0 && self.p_conv_min < 1.0) {
            return Err(Error::Config("p_conv_min must lie in (0, 1)".into()));
        }
        if !(self.settle_time >= 0.0 && self.settle_time.is_finite()) {
            return Err(Error::Config("settle_time must be finite and non-negative".into()));
        }
        if let Some(k) = self.excluded_actuators.iter().find(|&&k| k >= m) {
            return Err(Error::Config(format!("excluded actuator {k} out of range (m = {m})")));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub b: SwitchVector,
    pub cost: f64,
    pub evaluations: u64,
    pub source: Option<SearchStage>,
    pub predicted: DVector<f64>,
    pub eps_r: DVector<f64>,
    pub sigma: DVector<f64>,
    pub p_target: f64,
    pub note: Option<String>,
}

/// Chooses the switch vector for one correction.
#[allow(clippy::too_many_arguments)]
pub fn plan_correction(
    x_e: &DVector<f64>,
    jt: &InfluenceMatrix,
    config: &StaticConfig,
    dispersion: &DispersionModel,
    target: &TargetSpec,
    excluded: &BTreeSet<usize>,
    rng: &mut crate::rng::StreamRng,
) -> Result<PlanOutcome> {
    let m = jt.m();
    Error::check_dim("plan state error", jt.n(), x_e.len())?;
    Error::check_dim("plan dispersion", m, dispersion.m())?;
    let cost = CorrectionCost {
        kind: config.cost_kind,
        jt,
        x_e,
        target,
        dispersion,
        beta: config.penalty_beta,
    };
    let space = SearchSpace::excluding(m, excluded.iter().copied())?;
    let (b, best_cost, evaluations, source, note) = if space.allowed_count() == 0 {
        let b = SwitchVector::zeros(m);
        let c = cost.evaluate(&b);
        (b, c, 1, None, Some("no recruitable actuators".to_string()))
    } else {
        let r = combined_search(&cost, &space, &config.optimizer, rng)?;
        (r.best_b, r.best_cost, r.evaluations, Some(r.source), None)
    };
    Ok(PlanOutcome {
        predicted: superpose(jt, &b)?,
        eps_r: residual(jt, &b, x_e)?,
        sigma: dispersion.sigma_for(&b),
        p_target: on_target_probability(&b, jt, x_e, dispersion, target),
        b,
        cost: best_cost,
        evaluations,
        source,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Stopped by the convergence-probability guard.
    LimitCycle,
    /// The planner found no correction better than doing nothing.
    Stalled,
    Aborted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LimitCycle => "limit_cycle",
            Termination::Stalled => "stalled",
            Termination::Aborted => "aborted",
        }
    }
}

/// One applied correction.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub global_iteration: usize,
    /// Simulated time at the readout that started this iteration.
    pub sim_time: f64,
    pub events: Vec<String>,
    pub x: DVector<f64>,
    pub x_e: DVector<f64>,
    pub b: SwitchVector,
    pub predicted: DVector<f64>,
    pub eps_r: DVector<f64>,
    pub eps_r_norm: f64,
    pub sigma: DVector<f64>,
    pub cost: f64,
    pub evaluations: u64,
    pub source: Option<SearchStage>,
    pub p_target: f64,
    pub p_conv: f64,
    /// Filled from the next readout.
    pub x_next: Option<DVector<f64>>,
    pub eps_a: Option<DVector<f64>>,
    pub x_e_after: Option<DVector<f64>>,
    pub on_target: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetOutcome {
    pub target_index: usize,
    pub target: TargetSpec,
    pub records: Vec<IterationRecord>,
    pub n_f: usize,
    pub termination: Termination,
    pub final_x: Option<DVector<f64>>,
    pub final_x_e: Option<DVector<f64>>,
    /// Euclidean error over weighted DOFs at the last readout.
    pub final_error: f64,
    pub final_events: Vec<String>,
    pub on_target: bool,
    /// Total number of actuator toggles.
    pub switch_activity: usize,
    pub sim_time_start: f64,
    pub sim_time_end: f64,
    pub note: Option<String>,
}

impl TargetOutcome {
    pub fn mean_switches(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.switch_activity as f64 / self.records.len() as f64
        }
    }

    /// Weighted error norm at every readout of this target.
    pub fn error_norms(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.records.iter().map(|r| self.target.weighted_norm(&r.x_e)).collect();
        if let Some(e) = &self.final_x_e {
            out.push(self.target.weighted_norm(e));
        }
        out
    }

    /// Trace CSV: one row per readout.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.target.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = vec!["n".into(), "global_iteration".into(), "sim_time".into()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..n).map(|i| format!("x_e_{i}")));
        header.extend(["b", "s_n", "cost", "evaluations", "eps_r_norm", "p_target", "p_conv"].map(String::from));
        header.extend((0..n).map(|i| format!("sigma_{i}")));
        header.extend((0..n).map(|i| format!("eps_a_{i}")));
        header.push("events".into());
        w.write_record(&header)?;
        let fmt = |v: &DVector<f64>| v.iter().map(|x| format!("{x:.9}")).collect::<Vec<_>>();
        let blank = || vec![String::new(); n];
        for r in &self.records {
            let mut row = vec![r.n.to_string(), r.global_iteration.to_string(), format!("{:.3}", r.sim_time)];
            row.extend(fmt(&r.x));
            row.extend(fmt(&r.x_e));
            row.push(r.b.to_bitstring());
            row.push(r.b.switch_count().to_string());
            row.push(format!("{:.9}", r.cost));
            row.push(r.evaluations.to_string());
            row.push(format!("{:.9}", r.eps_r_norm));
            row.push(format!("{:.9}", r.p_target));
            row.push(format!("{:.9}", r.p_conv));
            row.extend(fmt(&r.sigma));
            row.extend(r.eps_a.as_ref().map_or_else(blank, fmt));
            row.push(r.events.join(";"));
            w.write_record(&row)?;
        }
        if let (Some(x), Some(x_e)) = (&self.final_x, &self.final_x_e) {
            let mut row = vec![
                self.n_f.to_string(),
                self.records.last().map_or(String::new(), |r| (r.global_iteration + 1).to_string()),
                format!("{:.3}", self.sim_time_end),
            ];
            row.extend(fmt(x));
            row.extend(fmt(x_e));
            row.extend(std::iter::repeat_n(String::new(), 7));
            row.extend(blank());
            row.extend(blank());
            row.push(self.final_events.join(";"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticTrace {
    pub outcomes: Vec<TargetOutcome>,
    /// Set when a runtime fault stopped the run early.
    pub abort: Option<String>,
    pub final_u: InputVector,
}

/// Runs the controller over `targets` in order, starting from the all-OFF input.
#[allow(clippy::too_many_arguments)]
pub fn run_static(
    plant: &PlantModel,
    calibration: &CalibrationReport,
    targets: &[TargetSpec],
    config: &StaticConfig,
    schedule: &Schedule,
    linearizer: Option<&dyn Linearizer>,
    streams: &mut Streams,
) -> Result<StaticTrace> {
    let (n, m) = (plant.n(), plant.m());
    calibration.check_plant(plant)?;
    config.validate(m)?;
    schedule.validate(n, m)?;
    for t in targets {
        Error::check_dim("target", n, t.dim())?;
    }

    let mut state = ScheduleState::new(schedule.clone(), n, config.excluded_actuators.clone());
    let mut u = InputVector::zeros(m);
    let mut global = 0usize;
    let mut clock = 0.0f64;
    let mut outcomes = Vec::with_capacity(targets.len());

    for (ti, target) in targets.iter().enumerate() {
        let result = run_target(
            plant,
            calibration,
            ti,
            target,
            config,
            &mut state,
            linearizer,
            streams,
            &mut u,
            &mut global,
            &mut clock,
        );
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err((partial, err)) => {
                outcomes.push(partial);
                return Ok(StaticTrace {
                    outcomes,
                    abort: Some(err.detail()),
                    final_u: u,
                });
            }
        }
    }
    Ok(StaticTrace {
        outcomes,
        abort: None,
        final_u: u,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_target(
    plant: &PlantModel,
    calibration: &CalibrationReport,
    ti: usize,
    target: &TargetSpec,
    config: &StaticConfig,
    state: &mut ScheduleState,
    linearizer: Option<&dyn Linearizer>,
    streams: &mut Streams,
    u: &mut InputVector,
    global: &mut usize,
    clock: &mut f64,
) -> std::result::Result<TargetOutcome, (TargetOutcome, Error)> {
    let mut out = TargetOutcome {
        target_index: ti,
        target: target.clone(),
        records: Vec::new(),
        n_f: 0,
        termination: Termination::Aborted,
        final_x: None,
        final_x_e: None,
        final_error: f64::NAN,
        final_events: Vec::new(),
        on_target: false,
        switch_activity: 0,
        sim_time_start: *clock,
        sim_time_end: *clock,
        note: None,
    };
    let x_d = target.x_d().vector().clone();

    loop {
        let events = state.advance(*global, *clock);
        let read = plant
            .steady_state(u, &state.faults, &state.load, &mut streams.noise)
            .and_then(|x| plant.check_bounded(x.vector()).map(|_| x));
        let x = match read {
            Ok(x) => x,
            Err(e) => {
                out.note = Some(e.detail());
                out.n_f = out.records.len();
                out.sim_time_end = *clock;
                return Err((out, Error::Runtime(format!("target {ti}: {}", e.detail()))));
            }
        };
        let x_e = &x_d - x.vector();
        if let Some(prev) = out.records.last_mut() {
            let dx = x.vector() - &prev.x;
            prev.eps_a = Some(dx - &prev.predicted);
            prev.x_e_after = Some(x_e.clone());
            prev.on_target = Some(target.within_tolerance(&x_e));
            prev.x_next = Some(x.vector().clone());
        }
        let finish = |out: &mut TargetOutcome, termination: Termination| {
            out.termination = termination;
            out.final_error = target.masked_error(&x_e);
            out.final_x = Some(x.vector().clone());
            out.final_x_e = Some(x_e.clone());
            out.final_events = events.clone();
            out.on_target = target.within_tolerance(&x_e);
            out.n_f = out.records.len();
            out.sim_time_end = *clock;
        };
        if target.within_tolerance(&x_e) {
            finish(&mut out, Termination::Converged);
            return Ok(out);
        }
        if out.records.len() >= config.max_iterations {
            finish(&mut out, Termination::MaxIterations);
            return Ok(out);
        }

        let planned = updated_jacobian(&calibration.j, u, &x, linearizer).and_then(|jt| {
            plan_correction(
                &x_e,
                &jt,
                config,
                &calibration.dispersion,
                target,
                &state.excluded,
                &mut streams.optimizer,
            )
        });
        let plan = match planned {
            Ok(p) => p,
            Err(e) => {
                finish(&mut out, Termination::Aborted);
                return Err((out, e));
            }
        };
        if plan.b.switch_count() == 0 {
            finish(&mut out, Termination::Stalled);
            out.note = plan.note;
            return Ok(out);
        }
        let x_e_norm = target.weighted_norm(&x_e);
        let p_conv = convergence_probability(&plan.eps_r, &plan.sigma, x_e_norm, target.weights());
        if config.stop_rule == StopRule::ConvergenceProbability && p_conv < config.p_conv_min {
            finish(&mut out, Termination::LimitCycle);
            return Ok(out);
        }

        *u = apply_switch(u, &plan.b).expect("dimensions checked");
        out.switch_activity += plan.b.switch_count();
        out.records.push(IterationRecord {
            n: out.records.len(),
            global_iteration: *global,
            sim_time: *clock,
            events,
            x: x.vector().clone(),
            eps_r_norm: target.weighted_norm(&plan.eps_r),
            x_e,
            b: plan.b,
            predicted: plan.predicted,
            eps_r: plan.eps_r,
            sigma: plan.sigma,
            cost: plan.cost,
            evaluations: plan.evaluations,
            source: plan.source,
            p_target: plan.p_target,
            p_conv,
            x_next: None,
            eps_a: None,
            x_e_after: None,
            on_target: None,
        });
        *global += 1;
        *clock += config.settle_time;
    }
}

/// Convenience wrapper for a target box with equal tolerance on weighted DOFs.
pub fn box_target(x_d: DVector<f64>, tolerance: f64, weights: Vec<f64>) -> Result<TargetSpec> {
    let n = x_d.len();
    TargetSpec::new(StateVector::from_vector(x_d)?, vec![tolerance; n], weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate, CalibrationConfig};
    use crate::model::{InfluenceKind, IdentityLinearizer};
    use crate::optimizer::brute_force;
    use crate::plant::{make_reference_plant, FaultState, LoadState};
    use crate::rng::stream;
    use crate::schedule::{EventTime, FaultEvent, FaultMode};
    use rand::Rng;

    fn setup(preset: &str, seed: u64) -> (PlantModel, CalibrationReport) {
        let p = make_reference_plant(preset, seed).unwrap();
        let c = calibrate(&p, &CalibrationConfig::default(), &mut stream(seed, "calibration")).unwrap();
        (p, c)
    }

    fn reachable_target(p: &PlantModel, seed: u64, tol: f64, weights: Vec<f64>) -> TargetSpec {
        let mut rng = stream(seed, "targets");
        let u = InputVector::from_bools((0..p.m()).map(|_| rng.random_bool(0.5)).collect());
        let x = p.steady_state_exact(&u, &FaultState::none(), &LoadState::zero(p.n())).unwrap();
        box_target(x, tol, weights).unwrap()
    }

    #[test]
    fn target_at_current_state_needs_no_iteration() {
        let (p, c) = setup("linear20x4", 1);
        let t = box_target(DVector::zeros(4), 0.5, vec![1.0; 4]).unwrap();
        let trace = run_static(&p, &c, &[t], &StaticConfig::default(), &Schedule::default(), None, &mut Streams::from_master(1))
            .unwrap();
        let o = &trace.outcomes[0];
        assert_eq!(o.n_f, 0);
        assert!(o.on_target);
        assert_eq!(o.termination, Termination::Converged);
    }

    #[test]
    fn linear_plant_first_error_equals_planned_residual_and_decreases() {
        let (p, c) = setup("linear20x4", 2);
        let w = vec![1.0, 1.0, 0.0, 0.0];
        let targets: Vec<TargetSpec> = (0..5).map(|s| reachable_target(&p, 100 + s, 0.2, w.clone())).collect();
        let cfg = StaticConfig {
            cost_kind: CostKind::Residual,
            ..Default::default()
        };
        let trace = run_static(&p, &c, &targets, &cfg, &Schedule::default(), None, &mut Streams::from_master(2)).unwrap();
        for o in &trace.outcomes {
            assert_eq!(o.termination, Termination::Converged, "{:?}", o.error_norms());
            for r in &o.records {
                let after = r.x_e_after.as_ref().unwrap();
                // x_e(n+1) = −(ε_r + ε_a), with ε_a = 0 on the linear plant
                assert!((after + &r.eps_r + r.eps_a.as_ref().unwrap()).amax() < 1e-9);
                assert!(r.eps_a.as_ref().unwrap().amax() < 1e-9);
                assert!((o.target.weighted_norm(after) - r.eps_r_norm).abs() < 1e-9);
            }
            let norms = o.error_norms();
            assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
        }
    }

    #[test]
    fn plan_returns_known_two_switch_solution() {
        let (p, c) = setup("linear20x4", 3);
        let u = InputVector::zeros(20);
        let x = StateVector::zeros(4);
        let jt = updated_jacobian(&c.j, &u, &x, None).unwrap();
        let x_e = jt.column(4) + jt.column(13);
        let t = box_target(x_e.clone(), 0.1, vec![1.0; 4]).unwrap();
        let plan = plan_correction(
            &x_e,
            &jt,
            &StaticConfig::default(),
            &c.dispersion,
            &t,
            &BTreeSet::new(),
            &mut stream(0, "o"),
        )
        .unwrap();
        assert_eq!(plan.b.ones_indices().collect::<Vec<_>>(), vec![4, 13]);
        assert!((plan.cost - 0.4).abs() < 1e-9);
        let _ = p;
    }

    #[test]
    fn plan_with_everything_excluded_is_null() {
        let (_, c) = setup("linear6x2", 3);
        let jt = updated_jacobian(&c.j, &InputVector::zeros(6), &StateVector::zeros(2), None).unwrap();
        let x_e = DVector::from_vec(vec![1.0, 1.0]);
        let t = box_target(x_e.clone(), 0.1, vec![1.0; 2]).unwrap();
        let plan = plan_correction(
            &x_e,
            &jt,
            &StaticConfig::default(),
            &c.dispersion,
            &t,
            &(0..6).collect(),
            &mut stream(0, "o"),
        )
        .unwrap();
        assert_eq!(plan.b, SwitchVector::zeros(6));
        assert_eq!(plan.note.as_deref(), Some("no recruitable actuators"));
        let zero = plan_correction(
            &DVector::zeros(2),
            &jt,
            &StaticConfig::default(),
            &c.dispersion,
            &t,
            &BTreeSet::new(),
            &mut stream(0, "o"),
        )
        .unwrap();
        assert_eq!(zero.b, SwitchVector::zeros(6));
    }

    #[test]
    fn penalized_planner_never_uses_more_switches_than_minimal_exact_solution() {
        let (_, c) = setup("linear12x3", 4);
        let jt = updated_jacobian(&c.j, &InputVector::zeros(12), &StateVector::zeros(3), None).unwrap();
        for seed in 0..10u64 {
            let mut rng = stream(seed, "pick");
            let picks: Vec<usize> = (0..12).filter(|_| rng.random_bool(0.3)).collect();
            let mut b_true = SwitchVector::zeros(12);
            for &k in &picks {
                b_true.set(k, true);
            }
            let x_e = superpose(&jt, &b_true).unwrap();
            let t = box_target(x_e.clone(), 0.1, vec![1.0; 3]).unwrap();
            let cfg = StaticConfig::default();
            let plan = plan_correction(&x_e, &jt, &cfg, &c.dispersion, &t, &BTreeSet::new(), &mut stream(seed, "o")).unwrap();
            let residual_only = |b: &SwitchVector| crate::cost::cost_residual(b, &jt, &x_e, t.weights());
            let oracle = brute_force(&residual_only, &SearchSpace::full(12)).unwrap();
            let min_exact = oracle.best_b.switch_count();
            if residual_only(&plan.b) < 1e-9 {
                assert!(plan.b.switch_count() <= min_exact);
            }
        }
    }

    #[test]
    fn detected_faults_never_recruited() {
        let (p, c) = setup("linear20x4", 5);
        let w = vec![1.0, 1.0, 0.0, 0.0];
        let targets: Vec<TargetSpec> = (0..4).map(|s| reachable_target(&p, 200 + s, 0.3, w.clone())).collect();
        let schedule = Schedule {
            faults: [2usize, 9, 17]
                .iter()
                .map(|&k| FaultEvent {
                    at: EventTime::Iteration(0),
                    actuator: k,
                    mode: FaultMode::StuckOff,
                    detected: true,
                })
                .collect(),
            loads: vec![],
        };
        let trace = run_static(&p, &c, &targets, &StaticConfig::default(), &schedule, None, &mut Streams::from_master(5))
            .unwrap();
        for o in &trace.outcomes {
            for r in &o.records {
                for k in [2, 9, 17] {
                    assert!(!r.b.get(k));
                }
            }
            let norms = o.error_norms();
            assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn undetected_stuck_actuators_produce_predicted_error() {
        let (p, c) = setup("linear20x4", 6);
        let stuck = [1usize, 5, 8, 14];
        let schedule = Schedule {
            faults: stuck
                .iter()
                .map(|&k| FaultEvent {
                    at: EventTime::Iteration(0),
                    actuator: k,
                    mode: FaultMode::StuckOn,
                    detected: false,
                })
                .collect(),
            loads: vec![],
        };
        let w = vec![1.0, 1.0, 0.0, 0.0];
        let targets: Vec<TargetSpec> = (0..6).map(|s| reachable_target(&p, 300 + s, 0.3, w.clone())).collect();
        let trace = run_static(&p, &c, &targets, &StaticConfig::default(), &schedule, None, &mut Streams::from_master(6))
            .unwrap();
        let mut u = InputVector::zeros(20);
        let mut checked = 0;
        for o in &trace.outcomes {
            for r in &o.records {
                let jt = updated_jacobian(&c.j, &u, &StateVector::from_vector(r.x.clone()).unwrap(), None).unwrap();
                let mut expect = DVector::zeros(4);
                for k in r.b.ones_indices().filter(|k| stuck.contains(k)) {
                    expect -= jt.column(k);
                }
                assert!((r.eps_a.as_ref().unwrap() - &expect).amax() < 1e-9);
                checked += 1;
                u = apply_switch(&u, &r.b).unwrap();
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn identity_linearizer_changes_nothing() {
        let (p, c) = setup("nonlinear20x4", 7);
        let t = vec![reachable_target(&p, 7, 0.5, vec![1.0, 1.0, 0.0, 0.0])];
        let a = run_static(&p, &c, &t, &StaticConfig::default(), &Schedule::default(), None, &mut Streams::from_master(7)).unwrap();
        let b = run_static(
            &p,
            &c,
            &t,
            &StaticConfig::default(),
            &Schedule::default(),
            Some(&IdentityLinearizer),
            &mut Streams::from_master(7),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn limit_cycle_guard_stops_hopeless_runs() {
        let (p, c) = setup("nonlinear20x4", 8);
        // far outside the workspace: no correction can converge
        let t = box_target(DVector::from_vec(vec![500.0, -500.0, 0.0, 0.0]), 0.5, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let cfg = StaticConfig {
            stop_rule: StopRule::ConvergenceProbability,
            ..Default::default()
        };
        let trace = run_static(&p, &c, &[t], &cfg, &Schedule::default(), None, &mut Streams::from_master(8)).unwrap();
        let o = &trace.outcomes[0];
        assert!(matches!(o.termination, Termination::LimitCycle | Termination::Stalled));
        assert!(!o.on_target);
    }

    #[test]
    fn trace_csv_has_row_per_readout() {
        let (p, c) = setup("linear20x4", 9);
        let t = reachable_target(&p, 9, 0.2, vec![1.0, 1.0, 0.0, 0.0]);
        let trace = run_static(&p, &c, &[t], &StaticConfig::default(), &Schedule::default(), None, &mut Streams::from_master(9))
            .unwrap();
        let o = &trace.outcomes[0];
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), o.n_f + 2);
        assert!(text.starts_with("n,global_iteration,sim_time,x_0,"));
    }

    #[test]
    fn mismatched_calibration_rejected() {
        let (p, _) = setup("linear20x4", 1);
        let (_, c) = setup("linear10x4", 1);
        let t = box_target(DVector::zeros(4), 0.5, vec![1.0; 4]).unwrap();
        assert!(run_static(&p, &c, &[t], &StaticConfig::default(), &Schedule::default(), None, &mut Streams::from_master(1))
            .is_err());
        let _ = InfluenceKind::Force;
    }
}
