//! Post-run metrics on controller traces.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::dynamic_control::DynamicTrace;
use crate::error::{Error, Result};
use crate::model::weighted_norm;
use crate::plant::FaultState;

/// Steady oscillation amplitude: half the peak-to-peak excursion of the error
/// after `from_time`, largest over the weighted DOFs.
pub fn chattering_amplitude(trace: &DynamicTrace, from_time: f64) -> f64 {
    let window: Vec<_> = trace.ticks.iter().filter(|t| t.t >= from_time - 1e-12).collect();
    if window.is_empty() {
        return 0.0;
    }
    let n = trace.weights.len();
    (0..n)
        .filter(|&i| trace.weights[i] > 0.0)
        .map(|i| {
            let (lo, hi) = window
                .iter()
                .map(|t| t.x_e[i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            0.5 * (hi - lo)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Fitted rate of `‖x_e‖ ∝ exp(−rate·t)`.
    pub rate: f64,
    pub r_squared: f64,
    pub onset: f64,
    pub points: usize,
}

/// Fits an exponential envelope to the error norm of a step response.
///
/// The fit starts at sliding onset, the first tick where the composite error
/// is small next to `λ‖x_e‖`, and stops once the error falls to `floor`.
pub fn fit_decay_rate(trace: &DynamicTrace, floor: f64) -> Result<DecayFit> {
    let w = &trace.weights;
    let onset = trace
        .ticks
        .iter()
        .position(|t| weighted_norm(w, &t.s) <= 0.25 * trace.lambda * weighted_norm(w, &t.x_e))
        .ok_or_else(|| Error::Runtime("no sliding onset in trace".into()))?;
    let pts: Vec<(f64, f64)> = trace.ticks[onset..]
        .iter()
        .map(|t| (t.t, weighted_norm(w, &t.x_e)))
        .take_while(|&(_, e)| e > floor)
        .collect();
    if pts.len() < 3 {
        return Err(Error::Runtime(format!("only {} points above the fit floor", pts.len())));
    }
    let (k, r2) = log_linear_fit(&pts);
    Ok(DecayFit {
        rate: -k,
        r_squared: r2,
        onset: trace.ticks[onset].t,
        points: pts.len(),
    })
}

/// Least-squares slope of `ln y` against `t`, with the coefficient of determination.
fn log_linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

/// The set of linear steady states reachable with binary inputs, projected on
/// two DOFs: a zonotope `offset + Σ [0, 1] g_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope2 {
    pub offset: Vector2<f64>,
    pub generators: Vec<Vector2<f64>>,
}

impl Zonotope2 {
    /// Projection of the displacement map on `dofs`. Stuck-ON actuators move
    /// into the offset, stuck actuators of either kind lose their generator.
    pub fn from_displacement_map(
        map: &DMatrix<f64>,
        x_rest: &DVector<f64>,
        dofs: [usize; 2],
        faults: &FaultState,
    ) -> Self {
        let pick = |v: nalgebra::DVectorView<'_, f64>| Vector2::new(v[dofs[0]], v[dofs[1]]);
        let mut offset = Vector2::new(x_rest[dofs[0]], x_rest[dofs[1]]);
        let mut generators = Vec::new();
        for k in 0..map.ncols() {
            let g = pick(map.column(k));
            if faults.stuck_on.contains(&k) {
                offset += g;
            } else if !faults.stuck_off.contains(&k) {
                generators.push(g);
            }
        }
        Zonotope2 { offset, generators }
    }

    fn support(&self, dir: &Vector2<f64>) -> f64 {
        dir.dot(&self.offset) + self.generators.iter().map(|g| dir.dot(g).max(0.0)).sum::<f64>()
    }

    /// Signed distance-like margin of `p`: positive inside (distance to the
    /// nearest edge), negative outside.
    pub fn margin(&self, p: &Vector2<f64>) -> f64 {
        let mut dirs: Vec<Vector2<f64>> = Vec::with_capacity(4 * self.generators.len() + 4);
        for g in &self.generators {
            let norm = g.norm();
            if norm > 1e-12 {
                let t = g / norm;
                let nrm = Vector2::new(-t.y, t.x);
                dirs.extend([nrm, -nrm, t, -t]);
            }
        }
        if dirs.is_empty() {
            return -(p - self.offset).norm();
        }
        dirs.iter().map(|d| self.support(d) - d.dot(p)).fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamic_control::Tick;
    use crate::model::InputVector;

    fn trace_from(errors: &[(f64, f64)], lambda: f64) -> DynamicTrace {
        let ticks = errors
            .iter()
            .enumerate()
            .map(|(i, &(t, e))| {
                // ideal sliding: ẋ_e = −λ x_e, so s = 0 except at the first tick
                let x_e = DVector::from_vec(vec![e]);
                let s = if i == 0 { &x_e * lambda } else { DVector::zeros(1) };
                Tick {
                    t,
                    x: DVector::zeros(1),
                    x_d: DVector::zeros(1),
                    x_e,
                    s,
                    u: InputVector::zeros(1),
                    switches: 0,
                    events: vec![],
                }
            })
            .collect();
        DynamicTrace {
            ticks,
            weights: DVector::from_element(1, 1.0),
            lambda,
            control_period: 0.01,
            abort: None,
        }
    }

    #[test]
    fn recovers_exact_exponential() {
        let pts: Vec<_> = (0..200).map(|i| (i as f64 * 0.01, 5.0 * (-1.5 * i as f64 * 0.01).exp())).collect();
        let fit = fit_decay_rate(&trace_from(&pts, 1.5), 0.1).unwrap();
        assert!((fit.rate - 1.5).abs() < 1e-9);
        assert!(fit.r_squared > 0.999_999);
        assert!((fit.onset - 0.01).abs() < 1e-12);
    }

    #[test]
    fn chattering_is_half_peak_to_peak() {
        let pts: Vec<_> = (0..100).map(|i| (i as f64 * 0.01, if i % 2 == 0 { 0.3 } else { -0.1 })).collect();
        let tr = trace_from(&pts, 1.0);
        assert!((chattering_amplitude(&tr, 0.5) - 0.2).abs() < 1e-12);
        assert_eq!(chattering_amplitude(&tr, 100.0), 0.0);
    }

    #[test]
    fn zonotope_margin_on_a_square() {
        let map = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let z = Zonotope2::from_displacement_map(&map, &DVector::zeros(2), [0, 1], &FaultState::none());
        assert!((z.margin(&Vector2::new(1.0, 0.5)) - 0.5).abs() < 1e-12);
        assert!(z.margin(&Vector2::new(3.0, 1.0)) < 0.0);
        // stuck-on shifts the set, stuck-off collapses it to a segment
        let on = Zonotope2::from_displacement_map(&map, &DVector::zeros(2), [0, 1], &FaultState::stuck_on([0]));
        assert_eq!(on.offset, Vector2::new(2.0, 0.0));
        assert!(on.margin(&Vector2::new(2.0, 1.0)) <= 0.0);
        assert!(on.margin(&Vector2::new(1.0, 1.0)) < 0.0);
    }

    #[test]
    fn zonotope_contains_every_vertex_combination() {
        let map = DMatrix::from_row_slice(2, 4, &[1.0, -0.5, 0.3, 2.0, 0.2, 1.5, -1.0, 0.4]);
        let z = Zonotope2::from_displacement_map(&map, &DVector::zeros(2), [0, 1], &FaultState::none());
        for code in 0u32..16 {
            let mut p = Vector2::zeros();
            for k in 0..4 {
                if code >> k & 1 == 1 {
                    p += Vector2::new(map[(0, k)], map[(1, k)]);
                }
            }
            assert!(z.margin(&p) > -1e-12, "vertex {code:04b} outside");
        }
        assert!(z.margin(&Vector2::new(10.0, 10.0)) < 0.0);
    }
}
