//! Desired-state trajectories for the dynamic controller.

use std::f64::consts::TAU;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    Hold {
        x_d: Vec<f64>,
    },
    /// Piecewise-linear path; held at the end points outside its time span.
    Polyline {
        waypoints: Vec<Waypoint>,
    },
    /// Circle in the plane of two DOFs, other DOFs held at `center`.
    Circle {
        center: Vec<f64>,
        radius: f64,
        period: f64,
        dofs: [usize; 2],
        #[serde(default)]
        phase: f64,
    },
}

impl Trajectory {
    pub fn hold(x_d: DVector<f64>) -> Self {
        Trajectory::Hold { x_d: x_d.iter().copied().collect() }
    }

    pub fn dim(&self) -> usize {
        match self {
            Trajectory::Hold { x_d } => x_d.len(),
            Trajectory::Polyline { waypoints } => waypoints.first().map_or(0, |w| w.x.len()),
            Trajectory::Circle { center, .. } => center.len(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Trajectory::Hold { x_d } => {
                Error::check_dim("hold target", n, x_d.len())?;
                if !finite(x_d) {
                    return Err(Error::validation("hold target has non-finite entries"));
                }
            }
            Trajectory::Polyline { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::validation("polyline needs at least one waypoint"));
                }
                for (i, w) in waypoints.iter().enumerate() {
                    Error::check_dim("polyline waypoint", n, w.x.len())?;
                    if !finite(&w.x) || !w.t.is_finite() {
                        return Err(Error::validation(format!("waypoint {i} has non-finite entries")));
                    }
                    if i > 0 && w.t <= waypoints[i - 1].t {
                        return Err(Error::validation("polyline waypoint times must increase strictly"));
                    }
                }
            }
            Trajectory::Circle { center, radius, period, dofs, phase } => {
                Error::check_dim("circle center", n, center.len())?;
                if !finite(center) || !phase.is_finite() {
                    return Err(Error::validation("circle has non-finite entries"));
                }
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::validation("circle radius must be finite and non-negative"));
                }
                if !(*period > 0.0 && period.is_finite()) {
                    return Err(Error::validation("circle period must be positive"));
                }
                if dofs[0] == dofs[1] || dofs.iter().any(|&d| d >= n) {
                    return Err(Error::validation(format!("circle DOFs {dofs:?} invalid for {n} DOFs")));
                }
            }
        }
        Ok(())
    }

    /// Desired state and its time derivative at `t`.
    pub fn sample(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        match self {
            Trajectory::Hold { x_d } => {
                let x = DVector::from_column_slice(x_d);
                let n = x.len();
                (x, DVector::zeros(n))
            }
            Trajectory::Polyline { waypoints } => {
                let n = waypoints[0].x.len();
                let first = &waypoints[0];
                let last = &waypoints[waypoints.len() - 1];
                if t <= first.t {
                    return (DVector::from_column_slice(&first.x), DVector::zeros(n));
                }
                if t >= last.t {
                    return (DVector::from_column_slice(&last.x), DVector::zeros(n));
                }
                let i = waypoints.partition_point(|w| w.t <= t) - 1;
                let (a, b) = (&waypoints[i], &waypoints[i + 1]);
                let (xa, xb) = (DVector::from_column_slice(&a.x), DVector::from_column_slice(&b.x));
                let span = b.t - a.t;
                let r = (t - a.t) / span;
                let vel = (&xb - &xa) / span;
                (&xa + (&xb - &xa) * r, vel)
            }
            Trajectory::Circle { center, radius, period, dofs, phase } => {
                let mut x = DVector::from_column_slice(center);
                let mut v = DVector::zeros(center.len());
                let w = TAU / period;
                let ang = w * t + phase;
                x[dofs[0]] += radius * ang.cos();
                x[dofs[1]] += radius * ang.sin();
                v[dofs[0]] = -radius * w * ang.sin();
                v[dofs[1]] = radius * w * ang.cos();
                (x, v)
            }
        }
    }
}
