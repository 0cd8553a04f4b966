//! Fault and load events applied during a run.

use std::collections::BTreeSet;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{FaultState, LoadState};

/// When an event fires: at a controller iteration (static corrections
/// applied, or dynamic control ticks) or at a simulated time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EventTime {
    Iteration(usize),
    Time(f64),
}

impl EventTime {
    fn due(&self, iteration: usize, time: f64) -> bool {
        match *self {
            EventTime::Iteration(i) => iteration >= i,
            EventTime::Time(t) => time >= t - 1e-12,
        }
    }

    fn key(&self) -> f64 {
        match *self {
            EventTime::Iteration(i) => i as f64,
            EventTime::Time(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    StuckOn,
    StuckOff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub at: EventTime,
    pub actuator: usize,
    pub mode: FaultMode,
    /// Detected faults are also excluded from planning.
    #[serde(default)]
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEvent {
    pub at: EventTime,
    /// External force replacing the current load.
    pub f_ext: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub faults: Vec<FaultEvent>,
    pub loads: Vec<LoadEvent>,
}

impl Schedule {
    pub fn is_empty(&self) -> bool {
        self.faults.is_empty() && self.loads.is_empty()
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let mut prev: Option<EventTime> = None;
        for f in &self.faults {
            if f.actuator >= m {
                return Err(Error::validation(format!(
                    "fault references actuator {} but the plant has {m}",
                    f.actuator
                )));
            }
            check_order(&mut prev, f.at, "fault")?;
        }
        prev = None;
        for l in &self.loads {
            if l.f_ext.len() != n {
                return Err(Error::validation(format!(
                    "load vector has {} entries, expected {n}",
                    l.f_ext.len()
                )));
            }
            if l.f_ext.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("load vector has non-finite entries"));
            }
            check_order(&mut prev, l.at, "load")?;
        }
        Ok(())
    }

    pub fn merged(&self, other: &Schedule) -> Schedule {
        let mut out = self.clone();
        out.faults.extend(other.faults.iter().cloned());
        out.loads.extend(other.loads.iter().cloned());
        out.faults.sort_by(|a, b| a.at.key().total_cmp(&b.at.key()));
        out.loads.sort_by(|a, b| a.at.key().total_cmp(&b.at.key()));
        out
    }
}

fn check_order(prev: &mut Option<EventTime>, at: EventTime, what: &str) -> Result<()> {
    if let EventTime::Time(t) = at {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::validation(format!("{what} event time must be finite and non-negative")));
        }
    }
    if let Some(p) = *prev {
        let same_kind = matches!(
            (p, &at),
            (EventTime::Iteration(_), EventTime::Iteration(_)) | (EventTime::Time(_), EventTime::Time(_))
        );
        if same_kind && at.key() < p.key() {
            return Err(Error::validation(format!("{what} events must be time-ordered")));
        }
    }
    *prev = Some(at);
    Ok(())
}

/// Mutable fault, load and exclusion state driven by a schedule.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    schedule: Schedule,
    fault_fired: Vec<bool>,
    load_fired: Vec<bool>,
    pub faults: FaultState,
    pub load: LoadState,
    pub excluded: BTreeSet<usize>,
}

impl ScheduleState {
    pub fn new(schedule: Schedule, n: usize, excluded: BTreeSet<usize>) -> Self {
        ScheduleState {
            fault_fired: vec![false; schedule.faults.len()],
            load_fired: vec![false; schedule.loads.len()],
            schedule,
            faults: FaultState::none(),
            load: LoadState::zero(n),
            excluded,
        }
    }

    /// Fires every pending event that is due. Returns a description of each.
    pub fn advance(&mut self, iteration: usize, time: f64) -> Vec<String> {
        let mut fired = Vec::new();
        for (i, ev) in self.schedule.faults.iter().enumerate() {
            if self.fault_fired[i] || !ev.at.due(iteration, time) {
                continue;
            }
            self.fault_fired[i] = true;
            let k = ev.actuator;
            self.faults.stuck_on.remove(&k);
            self.faults.stuck_off.remove(&k);
            let label = match ev.mode {
                FaultMode::StuckOn => {
                    self.faults.stuck_on.insert(k);
                    "stuck_on"
                }
                FaultMode::StuckOff => {
                    self.faults.stuck_off.insert(k);
                    "stuck_off"
                }
            };
            if ev.detected {
                self.excluded.insert(k);
            }
            fired.push(format!(
                "fault {label} {k}{}",
                if ev.detected { " detected" } else { "" }
            ));
        }
        for (i, ev) in self.schedule.loads.iter().enumerate() {
            if self.load_fired[i] || !ev.at.due(iteration, time) {
                continue;
            }
            self.load_fired[i] = true;
            self.load = LoadState {
                f_ext: DVector::from_vec(ev.f_ext.clone()),
            };
            fired.push("load".to_string());
        }
        fired
    }
}
