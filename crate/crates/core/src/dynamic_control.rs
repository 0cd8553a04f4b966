//! Sliding-mode motion controller with independent ON/OFF decisions per
//! actuator.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::calibration::{force_from_displacement, CalibrationReport};
use crate::error::{Error, Result};
use crate::model::{updated_jacobian, InfluenceMatrix, InputVector, StateVector};
use crate::plant::PlantModel;
use crate::rng::StreamRng;
use crate::schedule::{Schedule, ScheduleState};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicConfig {
    /// Decay rate of the sliding surface, 1/s.
    pub lambda: f64,
    pub control_period: f64,
    /// Dot products at or below this value never recruit.
    pub deadband: f64,
    /// Use displacement vectors in place of force vectors. Isotropic plants only.
    pub use_displacement_vectors: bool,
    /// Backward-difference window for the error derivative, 2 or 3 samples.
    pub derivative_window: usize,
    /// Per-DOF weights in the decision dot product. Empty means all ones.
    pub weights: Vec<f64>,
    /// Plant integration step; must divide `control_period`.
    pub substep: f64,
    pub duration: f64,
    pub excluded_actuators: BTreeSet<usize>,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        DynamicConfig {
            lambda: 1.0,
            control_period: 0.01,
            deadband: 0.0,
            use_displacement_vectors: false,
            derivative_window: 2,
            weights: Vec::new(),
            substep: 0.001,
            duration: 5.0,
            excluded_actuators: BTreeSet::new(),
        }
    }
}

impl DynamicConfig {
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.lambda) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !pos(self.control_period) {
            return Err(Error::Config("control_period must be positive".into()));
        }
        if !pos(self.substep) {
            return Err(Error::Config("substep must be positive".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Config("duration must be finite and non-negative".into()));
        }
        if !(self.deadband >= 0.0 && self.deadband.is_finite()) {
            return Err(Error::Config("deadband must be finite and non-negative".into()));
        }
        if !matches!(self.derivative_window, 2 | 3) {
            return Err(Error::Config("derivative_window must be 2 or 3".into()));
        }
        if !self.weights.is_empty() {
            Error::check_dim("dynamic weights", n, self.weights.len())?;
            if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return Err(Error::Config("weights must be finite and non-negative".into()));
            }
        }
        if let Some(k) = self.excluded_actuators.iter().find(|&&k| k >= m) {
            return Err(Error::Config(format!("excluded actuator {k} out of range (m = {m})")));
        }
        self.substeps().map(|_| ())
    }

    /// Number of integration steps per control period.
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.control_period / self.substep;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "control_period {} s is not an integer multiple of substep {} s",
                self.control_period, self.substep
            )));
        }
        Ok(k as usize)
    }

    pub fn weight_vector(&self, n: usize) -> DVector<f64> {
        if self.weights.is_empty() {
            DVector::from_element(n, 1.0)
        } else {
            DVector::from_column_slice(&self.weights)
        }
    }
}

/// `s = ẋ_e + λ x_e`.
pub fn composite_error(x_e: &DVector<f64>, x_e_dot: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    Error::check_dim("composite_error", x_e.len(), x_e_dot.len())?;
    Ok(x_e_dot + x_e * lambda)
}

fn weighted_dot(s: &DVector<f64>, f: DVectorView<'_, f64>, w: &DVector<f64>) -> f64 {
    s.iter().zip(f.iter()).zip(w.iter()).map(|((a, b), c)| a * b * c).sum()
}

/// The decision for one actuator from its raw influence vector. Depends on
/// nothing else, so faults elsewhere cannot change it.
pub fn actuator_decision(s: &DVector<f64>, f_k: DVectorView<'_, f64>, deadband: f64, weights: &DVector<f64>) -> bool {
    weighted_dot(s, f_k, weights) > deadband
}

#[derive(Debug, Clone, PartialEq)]
pub struct BangBang {
    pub u: InputVector,
    /// Toggles relative to the previous input.
    pub b: InputVector,
}

/// Next input from the sign-updated force matrix `f_updated` (built for `u`).
///
/// The direct rule `u_k = [s·f_k > d]` is authoritative. The switch form
/// `b_k = [s·f̃_k > d]`, `u ⊕ b`, agrees with it whenever `|s·f_k| > d`; inside
/// the deadband the switch form would keep an ON actuator ON, which the direct
/// rule forbids. Agreement on strict decisions is checked on every call.
pub fn bang_bang(
    s: &DVector<f64>,
    f_updated: &InfluenceMatrix,
    u: &InputVector,
    deadband: f64,
    weights: &DVector<f64>,
) -> Result<BangBang> {
    let (n, m) = (f_updated.n(), f_updated.m());
    Error::check_dim("bang_bang s", n, s.len())?;
    Error::check_dim("bang_bang weights", n, weights.len())?;
    Error::check_dim("bang_bang input", m, u.len())?;
    let mut next = InputVector::zeros(m);
    let mut toggles = InputVector::zeros(m);
    for k in 0..m {
        let tilde = weighted_dot(s, f_updated.column(k), weights);
        // undo the sign update to recover the raw vector's dot product
        let raw = if u.get(k) { -tilde } else { tilde };
        let direct = raw > deadband;
        let switch_form = u.get(k) ^ (tilde > deadband);
        if raw.abs() > deadband && direct != switch_form {
            return Err(Error::Contract(format!(
                "switch-form and direct decisions disagree for actuator {k}"
            )));
        }
        next.set(k, direct);
        toggles.set(k, direct != u.get(k));
    }
    Ok(BangBang { u: next, b: toggles })
}

/// One controller decision: [`bang_bang`], then excluded actuators held OFF.
pub fn decide_inputs(
    s: &DVector<f64>,
    f_updated: &InfluenceMatrix,
    u: &InputVector,
    deadband: f64,
    weights: &DVector<f64>,
    excluded: &BTreeSet<usize>,
) -> Result<BangBang> {
    let mut out = bang_bang(s, f_updated, u, deadband, weights)?;
    for &k in excluded {
        if k < u.len() {
            out.u.set(k, false);
            out.b.set(k, u.get(k));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub t: f64,
    /// Measured state.
    pub x: DVector<f64>,
    pub x_d: DVector<f64>,
    pub x_e: DVector<f64>,
    pub s: DVector<f64>,
    /// Input held over the following period.
    pub u: InputVector,
    pub switches: usize,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicTrace {
    pub ticks: Vec<Tick>,
    pub weights: DVector<f64>,
    pub lambda: f64,
    pub control_period: f64,
    pub abort: Option<String>,
}

impl DynamicTrace {
    pub fn times(&self) -> Vec<f64> {
        self.ticks.iter().map(|t| t.t).collect()
    }

    /// Weighted error norm per tick.
    pub fn error_norms(&self) -> Vec<f64> {
        self.ticks.iter().map(|t| crate::model::weighted_norm(&self.weights, &t.x_e)).collect()
    }

    pub fn switch_activity(&self) -> usize {
        self.ticks.iter().map(|t| t.switches).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.weights.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for prefix in ["x", "x_d", "x_e", "s"] {
            header.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        header.extend(["u", "switches", "events"].map(String::from));
        w.write_record(&header)?;
        for tk in &self.ticks {
            let mut row = vec![format!("{:.6}", tk.t)];
            for v in [&tk.x, &tk.x_d, &tk.x_e, &tk.s] {
                row.extend(v.iter().map(|x| format!("{x:.9}")));
            }
            row.push(tk.u.to_bitstring());
            row.push(tk.switches.to_string());
            row.push(tk.events.join(";"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Influence vectors used for decisions: force vectors from calibration, or
/// displacement vectors on an isotropic plant when requested.
pub fn decision_vectors(
    plant: &PlantModel,
    calibration: &CalibrationReport,
    use_displacement_vectors: bool,
) -> Result<InfluenceMatrix> {
    if use_displacement_vectors {
        if !plant.is_isotropic() {
            return Err(Error::Config(
                "displacement vectors can stand in for force vectors only on an isotropic plant".into(),
            ));
        }
        return Ok(calibration.j.clone());
    }
    match &calibration.f {
        Some(f) => Ok(f.clone()),
        None => force_from_displacement(&calibration.j, plant.stiffness()),
    }
}

struct Differentiator {
    window: usize,
    period: f64,
    history: Vec<DVector<f64>>,
}

impl Differentiator {
    fn push(&mut self, e: DVector<f64>) -> DVector<f64> {
        self.history.push(e);
        if self.history.len() > 3 {
            self.history.remove(0);
        }
        let h = &self.history;
        let last = h.len() - 1;
        match (self.window, h.len()) {
            (_, 1) => DVector::zeros(h[0].len()),
            (3, 3) => (&h[2] - &h[0]) / (2.0 * self.period),
            _ => (&h[last] - &h[last - 1]) / self.period,
        }
    }
}

/// Closed-loop run from the all-OFF steady state. Faults and loads follow
/// `schedule`, with iteration events counted in control ticks.
pub fn run_dynamic(
    plant: &PlantModel,
    calibration: &CalibrationReport,
    trajectory: &Trajectory,
    config: &DynamicConfig,
    schedule: &Schedule,
    noise: &mut StreamRng,
) -> Result<DynamicTrace> {
    let (n, m) = (plant.n(), plant.m());
    calibration.check_plant(plant)?;
    config.validate(n, m)?;
    trajectory.validate(n)?;
    schedule.validate(n, m)?;
    let substeps = config.substeps()?;
    if config.substep > plant.max_dt() {
        return Err(Error::Config(format!(
            "substep {} s exceeds the stable step {:.6} s of this plant",
            config.substep,
            plant.max_dt()
        )));
    }
    let f = decision_vectors(plant, calibration, config.use_displacement_vectors)?;
    let weights = config.weight_vector(n);
    let n_ticks = (config.duration / config.control_period + 1e-9).floor() as usize;

    let mut state = ScheduleState::new(schedule.clone(), n, config.excluded_actuators.clone());
    let mut u = InputVector::zeros(m);
    let first_events = state.advance(0, 0.0);
    let mut x = plant.steady_state_exact(&u, &state.faults, &state.load)?;
    let mut v = DVector::zeros(n);
    let mut diff = Differentiator {
        window: config.derivative_window,
        period: config.control_period,
        history: Vec::new(),
    };
    let mut trace = DynamicTrace {
        ticks: Vec::with_capacity(n_ticks + 1),
        weights: weights.clone(),
        lambda: config.lambda,
        control_period: config.control_period,
        abort: None,
    };

    for tick in 0..=n_ticks {
        let t = tick as f64 * config.control_period;
        let events = if tick == 0 { first_events.clone() } else { state.advance(tick, t) };
        let measured = plant.readout(&x, noise)?.into_vector();
        let (x_d, _) = trajectory.sample(t);
        let x_e = &x_d - &measured;
        let x_e_dot = diff.push(x_e.clone());
        let s = composite_error(&x_e, &x_e_dot, config.lambda)?;
        let f_updated = updated_jacobian(&f, &u, &StateVector::from_vector(measured.clone())?, None)?;
        let decision = decide_inputs(&s, &f_updated, &u, config.deadband, &weights, &state.excluded)?;
        let switches = decision.b.count_ones();
        u = decision.u;
        trace.ticks.push(Tick {
            t,
            x: measured,
            x_d,
            x_e,
            s,
            u: u.clone(),
            switches,
            events,
        });
        if tick == n_ticks {
            break;
        }
        for _ in 0..substeps {
            let (xn, vn) = plant.step(&x, &v, &u, &state.faults, &state.load, config.substep)?;
            x = xn;
            v = vn;
        }
        if let Err(e) = plant.check_bounded(&x).and_then(|_| plant.check_bounded(&v)) {
            trace.abort = Some(format!("after t = {t:.3} s: {}", e.detail()));
            break;
        }
    }
    Ok(trace)
}
