//! Numerical helpers: normal interval probabilities, the noncentral
//! chi-squared CDF, and rank correlation.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `P(lo < Z < hi)` for a standard normal `Z`, evaluated on whichever tail
/// keeps precision when both bounds are far from zero.
pub fn normal_interval(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let p = if lo >= 0.0 {
        // upper tail: Q(lo) − Q(hi)
        0.5 * (erfc(lo * FRAC_1_SQRT_2) - erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi * FRAC_1_SQRT_2) - erfc(-lo * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * (erfc(-lo * FRAC_1_SQRT_2) + erfc(hi * FRAC_1_SQRT_2))
    };
    p.clamp(0.0, 1.0)
}

/// CDF of the noncentral chi-squared distribution with `k` degrees of freedom
/// and noncentrality `lambda`, as a Poisson(λ/2) mixture of central χ²
/// CDFs. Terms are summed outward from the Poisson mode.
pub fn noncentral_chi2_cdf(x: f64, k: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return 1.0;
    }
    let half = 0.5 * lambda.max(0.0);
    if half == 0.0 {
        return gamma_lr(0.5 * k, 0.5 * x);
    }
    let mode = half.floor();
    let log_weight = |j: f64| -half + j * half.ln() - ln_gamma(j + 1.0);
    let term = |j: f64| log_weight(j).exp() * gamma_lr(0.5 * k + j, 0.5 * x);

    let mut total = term(mode);
    // upward: central CDFs decrease with j, weights decay past the mode
    let mut j = mode + 1.0;
    loop {
        let w = log_weight(j).exp();
        let t = w * gamma_lr(0.5 * k + j, 0.5 * x);
        total += t;
        if w < 1e-17 || (t < 1e-17 * total && j > mode + 10.0) {
            break;
        }
        j += 1.0;
    }
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let w = log_weight(j).exp();
        total += w * gamma_lr(0.5 * k + j, 0.5 * x);
        if w < 1e-17 {
            break;
        }
        j -= 1.0;
    }
    total.clamp(0.0, 1.0)
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RankCorrelation {
    pub rho: f64,
    /// One-sided p-value for a positive association (t approximation).
    pub p_positive: f64,
}

/// Spearman rank correlation with a one-sided p-value from the usual
/// `t = ρ √((n−2)/(1−ρ²))` approximation.
pub fn spearman(x: &[f64], y: &[f64]) -> RankCorrelation {
    let n = x.len().min(y.len());
    let rho = pearson(&ranks(&x[..n]), &ranks(&y[..n]));
    let p_positive = if n < 3 {
        1.0
    } else if rho >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        1.0 - dist.cdf(t)
    };
    RankCorrelation { rho, p_positive }
}
