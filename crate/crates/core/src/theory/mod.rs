//! Closed forms and Monte-Carlo estimators for the two-class attention
//! theory: the attention-weighted label score, its signal-to-noise ratio,
//! and the distance, gap and variance formulas behind the temperature and
//! oracle-gate results.
//!
//! Everything here works with the weighted ℓ1 logit
//! `e_ij = -sum_l w_l |h_il - h_jl|` and ±1 labels. Self-loops are never
//! part of a neighborhood.

mod montecarlo;
mod snr;
pub mod verify;

pub use montecarlo::{b_tau_monte_carlo, distance_monte_carlo, logit_stats_monte_carlo, LogitPair, LogitStats};
pub use snr::{
    snr_monte_carlo, snr_whole_graph, DegreeLaw, PairedDifference, SnrConditioning, SnrEstimate, SnrExperiment,
    SnrSetting, SnrSweep, TheoryGate,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MeanEstimate {
    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.std_error
    }
}

/// `R_i = sum_j alpha_ij y_j`.
pub fn r_score(alphas: &[f64], labels: &[f64]) -> Result<f64> {
    if alphas.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "r_score",
            detail: format!("{} weights for {} labels", alphas.len(), labels.len()),
        });
    }
    let total: f64 = alphas.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("attention weights sum to {total}, not 1")));
    }
    Ok(alphas.iter().zip(labels).map(|(a, y)| a * y).sum())
}

/// `sum_j alpha_j^2`, the inverse effective neighborhood size. At least
/// `1/K`, with equality only for uniform weights.
pub fn concentration(alphas: &[f64]) -> f64 {
    alphas.iter().map(|a| a * a).sum()
}

/// Whether `alphas` respects the `1/K` floor on concentration, allowing
/// for rounding.
pub fn concentration_holds(alphas: &[f64]) -> bool {
    let k = alphas.len() as f64;
    concentration(alphas) >= 1.0 / k - 1e-12
}

/// `E|t - xi|` for `xi ~ N(0, tau^2)` (the folded-normal mean).
pub fn a_tau(t: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return t.abs();
    }
    let s = tau * std::f64::consts::SQRT_2;
    let closed = tau * (2.0 / std::f64::consts::PI).sqrt() * (-(t * t) / (2.0 * tau * tau)).exp() + t * libm::erf(t / s);
    if closed.is_finite() {
        closed
    } else {
        a_tau_quadrature(t, tau)
    }
}

/// `E|t - tau z|` by composite Simpson over `z in [-12, 12]`, split at the
/// kink `z = t / tau`.
pub fn a_tau_quadrature(t: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return t.abs();
    }
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |z: f64| (t - tau * z).abs() * pdf(z);
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let kink = (t / tau).clamp(-12.0, 12.0);
    simpson(-12.0, kink, 4000) + simpson(kink, 12.0, 4000)
}

/// `E|xi_1 - xi_2| = 2 tau / sqrt(pi)` for independent `N(0, tau^2)` draws.
pub fn b_tau(tau: f64) -> f64 {
    2.0 * tau / std::f64::consts::PI.sqrt()
}

/// Expected per-coordinate distance `E|h_il - h_jl|` under coordinate-missing
/// noise, conditional on whether `y_i = y_j`. With `gated` the oracle gate
/// has zeroed every missing coordinate first.
pub fn expected_distance(same_class: bool, mu_l: f64, rho: f64, tau: f64, gated: bool) -> f64 {
    let m = mu_l.abs();
    let kept = 1.0 - rho;
    match (gated, same_class) {
        (false, true) => 2.0 * rho * kept * a_tau(m, tau) + rho * rho * b_tau(tau),
        (false, false) => 2.0 * kept * kept * m + 2.0 * rho * kept * a_tau(m, tau) + rho * rho * b_tau(tau),
        (true, true) => 2.0 * rho * kept * m,
        (true, false) => 2.0 * kept * m,
    }
}

/// Expected weighted ℓ1 logit, `-sum_l w_l E|h_il - h_jl|`.
pub fn expected_logit(same_class: bool, mu: &[f64], w: &[f64], rho: f64, tau: f64, gated: bool) -> f64 {
    -mu.iter()
        .zip(w)
        .map(|(&m, &wl)| wl * expected_distance(same_class, m, rho, tau, gated))
        .sum::<f64>()
}

/// Class-separation logit gap `E[e | same] - E[e | different]`, shared by
/// the ungated and oracle-gated logits: `2 (1 - rho)^2 sum_l w_l |mu_l|`.
pub fn logit_gap(mu: &[f64], w: &[f64], rho: f64) -> Result<f64> {
    check_weights(mu, w)?;
    let kept = 1.0 - rho;
    Ok(2.0 * kept * kept * mu.iter().zip(w).map(|(m, wl)| wl * m.abs()).sum::<f64>())
}

fn check_weights(mu: &[f64], w: &[f64]) -> Result<()> {
    if mu.len() != w.len() {
        return Err(Error::ShapeMismatch {
            op: "theory",
            detail: format!("mu has {} entries, w has {}", mu.len(), w.len()),
        });
    }
    if let Some(bad) = w.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter(format!("weights must be positive, got {bad}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBounds {
    /// `C_g = 4 sum_l w_l^2 mu_l^2`, bounding the oracle-gated logit variance.
    pub gated_upper: f64,
    /// `2 rho^2 (1 - 2/pi) tau^2 sum_l w_l^2`, bounding the ungated logit
    /// variance from below.
    pub ungated_lower: f64,
}

pub fn variance_bounds(mu: &[f64], w: &[f64], rho: f64, tau: f64) -> Result<VarianceBounds> {
    check_weights(mu, w)?;
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let swm: f64 = mu.iter().zip(w).map(|(m, wl)| wl * wl * m * m).sum();
    Ok(VarianceBounds {
        gated_upper: 4.0 * swm,
        ungated_lower: 2.0 * rho * rho * (1.0 - 2.0 / std::f64::consts::PI) * tau * tau * sw2,
    })
}

/// Softmax at temperature `t` next to its first-order expansion
/// `1/K + (e_j - mean(e)) / (K t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrder {
    pub approx: Vec<f64>,
    pub exact: Vec<f64>,
    pub max_error: f64,
}

pub fn softmax_first_order(e: &[f64], t: f64) -> Result<FirstOrder> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    if e.is_empty() {
        return Err(Error::InvalidParameter("softmax over an empty logit vector".into()));
    }
    let k = e.len() as f64;
    let mean = e.iter().sum::<f64>() / k;
    let approx: Vec<f64> = e.iter().map(|x| 1.0 / k + (x - mean) / (k * t)).collect();
    let exact = softmax(e, t);
    let max_error = approx.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(FirstOrder {
        approx,
        exact,
        max_error,
    })
}

pub(crate) fn softmax(e: &[f64], t: f64) -> Vec<f64> {
    let mx = e.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let ex: Vec<f64> = e.iter().map(|x| ((x - mx) / t).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_score_cases() {
        assert_eq!(r_score(&[0.25; 4], &[1.0; 4]).unwrap(), 1.0);
        assert_eq!(r_score(&[0.25; 4], &[1.0, -1.0, 1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(r_score(&[0.0, 1.0, 0.0], &[1.0, -1.0, 1.0]).unwrap(), -1.0);
        assert!(r_score(&[0.5, 0.4], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn concentration_cases() {
        assert!((concentration(&[0.2; 5]) - 0.2).abs() < 1e-15);
        assert_eq!(concentration(&[0.0, 1.0, 0.0]), 1.0);
        assert_eq!(concentration(&[0.5, 0.25, 0.25]), 0.375);
        assert!(concentration_holds(&[0.5, 0.25, 0.25]));
    }

    #[test]
    fn a_tau_limits() {
        assert_eq!(a_tau(-1.7, 0.0), 1.7);
        assert!((a_tau(0.0, 1.0) - 0.7978845608028654).abs() < 1e-12);
        assert!((a_tau(3.0, 0.5) - a_tau_quadrature(3.0, 0.5)).abs() < 1e-9);
        for &(t, tau) in &[(0.0, 2.0), (1.0, 1.0), (-4.0, 0.3)] {
            let v = a_tau(t, tau);
            assert!(v >= t.abs() && v >= a_tau(0.0, tau) - 1e-15);
        }
    }

    #[test]
    fn b_tau_values() {
        assert_eq!(b_tau(0.0), 0.0);
        assert!((b_tau(1.0) - 1.128379).abs() < 1e-6);
    }

    #[test]
    fn distance_extremes() {
        for gated in [false, true] {
            assert_eq!(expected_distance(true, 1.5, 0.0, 2.0, gated), 0.0);
            assert_eq!(expected_distance(false, 1.5, 0.0, 2.0, gated), 3.0);
        }
        for same in [false, true] {
            assert!((expected_distance(same, 1.5, 1.0, 2.0, false) - b_tau(2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn gap_and_bounds() {
        assert_eq!(logit_gap(&[1.0], &[1.0], 1.0).unwrap(), 0.0);
        assert_eq!(logit_gap(&[1.0], &[1.0], 0.0).unwrap(), 2.0);
        assert!((logit_gap(&[1.0, 0.5], &[1.0, 2.0], 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(logit_gap(&[1.0], &[0.0], 0.5).is_err());
        for gated in [false, true] {
            let mu = [1.0, -0.5];
            let w = [0.7, 2.0];
            let gap = expected_logit(true, &mu, &w, 0.3, 2.0, gated) - expected_logit(false, &mu, &w, 0.3, 2.0, gated);
            assert!((gap - logit_gap(&mu, &w, 0.3).unwrap()).abs() < 1e-12);
        }
        let b = variance_bounds(&[1.0, 1.0], &[1.0, 1.0], 0.3, 0.0).unwrap();
        assert_eq!(b.gated_upper, 8.0);
        assert_eq!(b.ungated_lower, 0.0);
        let b = variance_bounds(&[1.0], &[1.0], 0.3, 10.0).unwrap();
        assert!((b.ungated_lower - 6.5407).abs() < 1e-3);
    }

    #[test]
    fn first_order_cases() {
        let r = softmax_first_order(&[0.3; 4], 1.0).unwrap();
        assert!(r.max_error < 1e-16);
        assert!(r.approx.iter().all(|a| (a - 0.25).abs() < 1e-16));
        assert!(softmax_first_order(&[1.0], 0.0).is_err());
    }
}
