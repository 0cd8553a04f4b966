//! Cost functions for correction planning and the on-target and convergence
//! probabilities.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{weighted_norm, DispersionModel, InfluenceMatrix, SwitchVector, TargetSpec};
use crate::optimizer::CostFunction;
use crate::rng::StreamRng;
use crate::stats::{noncentral_chi2_cdf, normal_interval};

/// Probabilities below this are treated as zero by the probabilistic cost.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
pub const PROBABILITY_COST_CAP: f64 = 1e12;
pub const MONTE_CARLO_SAMPLES: usize = 100_000;
const MONTE_CARLO_SEED: u64 = 0x00c0_ffee_5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Residual,
    #[default]
    Penalized,
    Probabilistic,
}

impl CostKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::Residual => "residual",
            CostKind::Penalized => "penalized",
            CostKind::Probabilistic => "probabilistic",
        }
    }
}

fn prediction(jt: &InfluenceMatrix, b: &SwitchVector, x_e: &DVector<f64>) -> DVector<f64> {
    let mut r = -x_e;
    for k in b.ones_indices() {
        r += jt.column(k);
    }
    r
}

/// Weighted norm of the resolution error `J̃b − x_e`.
pub fn cost_residual(b: &SwitchVector, jt: &InfluenceMatrix, x_e: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    weighted_norm(weights, &prediction(jt, b, x_e))
}

/// Residual plus `β s_n`.
pub fn cost_penalized(
    b: &SwitchVector,
    jt: &InfluenceMatrix,
    x_e: &DVector<f64>,
    weights: &DVector<f64>,
    beta: f64,
) -> f64 {
    cost_residual(b, jt, x_e, weights) + beta * b.switch_count() as f64
}

/// Probability that every weighted DOF lands strictly within tolerance when
/// the per-DOF error is `N(μ_i, σ_i²)`.
pub fn target_probability_from(mu: &DVector<f64>, sigma: &DVector<f64>, target: &TargetSpec) -> f64 {
    let mut p = 1.0;
    for i in target.weighted_dofs() {
        let tol = target.tolerance()[i];
        let pi = if sigma[i] > 0.0 {
            normal_interval((-tol - mu[i]) / sigma[i], (tol - mu[i]) / sigma[i])
        } else if mu[i].abs() < tol {
            1.0
        } else {
            0.0
        };
        p *= pi;
        if p == 0.0 {
            break;
        }
    }
    p
}

pub fn on_target_probability(
    b: &SwitchVector,
    jt: &InfluenceMatrix,
    x_e: &DVector<f64>,
    dispersion: &DispersionModel,
    target: &TargetSpec,
) -> f64 {
    target_probability_from(&prediction(jt, b, x_e), &dispersion.sigma_for(b), target)
}

/// `P(‖ε_r + ε_a‖_W < ‖x_e‖_W)` with `ε_a,i ~ N(0, σ_i²)` independent.
///
/// Uses the noncentral χ² law when `w_i σ_i` is equal across weighted DOFs,
/// and a fixed-seed Monte Carlo estimate otherwise.
pub fn convergence_probability(
    eps_r: &DVector<f64>,
    sigma: &DVector<f64>,
    x_e_norm: f64,
    weights: &DVector<f64>,
) -> f64 {
    let dofs: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let scaled: Vec<f64> = dofs.iter().map(|&i| weights[i] * sigma[i]).collect();
    let r_norm = weighted_norm(weights, eps_r);
    if scaled.iter().all(|&s| s == 0.0) {
        return if r_norm < x_e_norm { 1.0 } else { 0.0 };
    }
    let s0 = scaled[0];
    let isotropic = scaled.iter().all(|&s| (s - s0).abs() <= 1e-12 * s0.abs().max(1e-300));
    if isotropic {
        let lambda = (r_norm / s0).powi(2);
        return noncentral_chi2_cdf((x_e_norm / s0).powi(2), dofs.len() as f64, lambda);
    }
    let mut rng = StreamRng::seed_from_u64(MONTE_CARLO_SEED);
    let limit = x_e_norm * x_e_norm;
    let mut hits = 0usize;
    for _ in 0..MONTE_CARLO_SAMPLES {
        let mut acc = 0.0;
        for (idx, &i) in dofs.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = weights[i] * eps_r[i] + scaled[idx] * z;
            acc += v * v;
        }
        if acc < limit {
            hits += 1;
        }
    }
    hits as f64 / MONTE_CARLO_SAMPLES as f64
}

/// Planning cost bound to one control step.
pub struct CorrectionCost<'a> {
    pub kind: CostKind,
    pub jt: &'a InfluenceMatrix,
    pub x_e: &'a DVector<f64>,
    pub target: &'a TargetSpec,
    pub dispersion: &'a DispersionModel,
    pub beta: f64,
}

impl CorrectionCost<'_> {
    fn tolerance_scale(&self) -> f64 {
        weighted_norm(self.target.weights(), self.target.tolerance()).max(f64::MIN_POSITIVE)
    }
}

impl CostFunction for CorrectionCost<'_> {
    fn evaluate(&self, b: &SwitchVector) -> f64 {
        let w = self.target.weights();
        match self.kind {
            CostKind::Residual => cost_residual(b, self.jt, self.x_e, w),
            CostKind::Penalized => cost_penalized(b, self.jt, self.x_e, w, self.beta),
            CostKind::Probabilistic => {
                let mu = prediction(self.jt, b, self.x_e);
                let p = target_probability_from(&mu, &self.dispersion.sigma_for(b), self.target);
                if p >= PROBABILITY_FLOOR {
                    1.0 / p
                } else {
                    // keep candidates ordered by how far they miss
                    PROBABILITY_COST_CAP * (1.0 + weighted_norm(w, &mu) / self.tolerance_scale())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InfluenceKind, StateVector};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn target(n: usize, tol: f64, weights: Vec<f64>) -> TargetSpec {
        TargetSpec::new(StateVector::zeros(n), vec![tol; n], weights).unwrap()
    }

    fn jt2() -> InfluenceMatrix {
        InfluenceMatrix::new(
            DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]),
            InfluenceKind::Displacement,
        )
        .unwrap()
    }

    #[test]
    fn residual_cost_examples() {
        let j = jt2();
        let x_e = DVector::from_vec(vec![1.0, 1.0, 5.0, 5.0]);
        let w = DVector::from_element(4, 1.0);
        assert_eq!(cost_residual(&SwitchVector::unit(3, 2), &j, &x_e, &w), 0.0);
        assert!((cost_residual(&SwitchVector::zeros(3), &j, &x_e, &w) - x_e.norm()).abs() < 1e-12);
        // weights zeroing DOFs 2 and 3
        let w2 = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let big = DVector::from_vec(vec![1.0, 1.0, 500.0, -300.0]);
        assert_eq!(cost_residual(&SwitchVector::unit(3, 2), &j, &big, &w2), 0.0);
    }

    #[test]
    fn penalized_cost_examples() {
        let j = jt2();
        let x_e = DVector::from_vec(vec![1.0, 1.0, 5.0, 5.0]);
        let w = DVector::from_element(4, 1.0);
        for bits in ["000", "100", "111"] {
            let b = SwitchVector::parse_bitstring(bits).unwrap();
            assert_eq!(cost_penalized(&b, &j, &x_e, &w, 0.0), cost_residual(&b, &j, &x_e, &w));
        }
        // two exact solutions with s_n = 2 and 5
        let exact = DMatrix::from_row_slice(1, 7, &[1.0, 1.0, 0.4, 0.4, 0.4, 0.4, 0.4]);
        let j = InfluenceMatrix::new(exact, InfluenceKind::Displacement).unwrap();
        let x = DVector::from_vec(vec![2.0]);
        let w = DVector::from_vec(vec![1.0]);
        let two = SwitchVector::parse_bitstring("1100000").unwrap();
        let five = SwitchVector::parse_bitstring("0011111").unwrap();
        assert!((cost_penalized(&two, &j, &x, &w, 0.2) - 0.4).abs() < 1e-12);
        assert!((cost_penalized(&five, &j, &x, &w, 0.2) - 1.0).abs() < 1e-12);
        assert_eq!(cost_penalized(&SwitchVector::zeros(7), &j, &DVector::zeros(1), &w, 0.2), 0.0);
    }

    #[test]
    fn on_target_probability_examples() {
        let t = target(1, 1.0, vec![1.0]);
        let p = target_probability_from(&DVector::zeros(1), &DVector::from_element(1, 1.0), &t);
        assert!((p - 0.682_689_492_137_086).abs() < 1e-9);
        let p = target_probability_from(&DVector::zeros(1), &DVector::from_element(1, 1e-9), &t);
        assert!((p - 1.0).abs() < 1e-12);

        let j = jt2();
        let d = DispersionModel::shared(DVector::from_element(4, 0.3), 3).unwrap();
        let t4 = target(4, 0.5, vec![1.0, 1.0, 0.0, 0.0]);
        let x_e = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(on_target_probability(&SwitchVector::zeros(3), &j, &x_e, &d, &t4), 0.0);
    }

    #[test]
    fn convergence_probability_examples() {
        let w = DVector::from_element(2, 1.0);
        let zero = DVector::zeros(2);
        let small = DVector::from_vec(vec![0.1, 0.0]);
        let big = DVector::from_vec(vec![3.0, 0.0]);
        assert_eq!(convergence_probability(&small, &zero, 1.0, &w), 1.0);
        assert_eq!(convergence_probability(&big, &zero, 1.0, &w), 0.0);
        let p = convergence_probability(&zero, &DVector::from_element(2, 1.0), 1.0, &w);
        assert!((p - (1.0 - (-0.5f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn convergence_probability_anisotropic_agrees_with_closed_form_when_isotropic_in_disguise() {
        // weights compensate the σ ratio, so the weighted problem is isotropic
        let eps = DVector::from_vec(vec![0.3, 0.02]);
        let sigma = DVector::from_vec(vec![0.35, 0.025]);
        let w = DVector::from_vec(vec![1.0, 14.0]);
        let exact = convergence_probability(&eps, &sigma, 0.8, &w);
        let w_off = DVector::from_vec(vec![1.0, 14.0000001]);
        let mc = convergence_probability(&eps, &sigma, 0.8, &w_off);
        assert!((exact - mc).abs() < 0.01, "{exact} vs {mc}");
    }

    #[test]
    fn probabilistic_cost_stays_finite_and_ordered() {
        let j = jt2();
        let d = DispersionModel::shared(DVector::from_element(4, 0.01), 3).unwrap();
        let t = target(4, 0.1, vec![1.0, 1.0, 0.0, 0.0]);
        let x_e = DVector::from_vec(vec![40.0, 40.0, 0.0, 0.0]);
        let cost = CorrectionCost {
            kind: CostKind::Probabilistic,
            jt: &j,
            x_e: &x_e,
            target: &t,
            dispersion: &d,
            beta: 0.2,
        };
        let none = cost.evaluate(&SwitchVector::zeros(3));
        let all = cost.evaluate(&SwitchVector::ones(3));
        assert!(none.is_finite() && all.is_finite());
        assert!(all < none);
        assert!(all >= PROBABILITY_COST_CAP);
    }

    #[test]
    fn case_a_b_ranking_matches_monte_carlo() {
        // A: centred but wide; B: offset but narrow
        let t = target(1, 1.0, vec![1.0]);
        let pa = target_probability_from(&DVector::zeros(1), &DVector::from_element(1, 2.0), &t);
        let pb = target_probability_from(&DVector::from_element(1, 0.5), &DVector::from_element(1, 0.3), &t);
        assert!(pb > pa);
        let mut rng = StreamRng::seed_from_u64(1);
        let mc = |mu: f64, s: f64, rng: &mut StreamRng| {
            (0..100_000)
                .filter(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (mu + s * z).abs() < 1.0
                })
                .count() as f64
                / 1e5
        };
        assert!((mc(0.0, 2.0, &mut rng) - pa).abs() < 0.01);
        assert!((mc(0.5, 0.3, &mut rng) - pb).abs() < 0.01);
    }
}
