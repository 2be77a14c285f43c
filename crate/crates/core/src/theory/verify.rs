//! The full battery of theory checks, each reported as a pass/fail record.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::csbm::CsbmParams;
use crate::noise::NoiseKind;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub d: usize,
    /// Neighborhood size for the fixed-K estimators.
    pub k: usize,
    pub sigma: f64,
    pub rho: f64,
    pub tau: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub t_grid: Vec<f64>,
    pub gate_temperature: f64,
    pub trials: usize,
    pub batches: usize,
    pub seed: u64,
    pub grid_rho: Vec<f64>,
    pub grid_tau: Vec<f64>,
    pub grid_mu: Vec<f64>,
    pub grid_samples: usize,
    pub b_tau_tau: f64,
    pub b_tau_pairs: usize,
    pub variance_samples: usize,
    pub softmax_draws: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            a: 4.0,
            b: 2.0,
            d: 8,
            k: 10,
            sigma: 10.0,
            rho: 0.3,
            tau: 10.0,
            t_low: 1.0,
            t_high: 100.0,
            t_grid: vec![0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0],
            gate_temperature: 100.0,
            trials: 100_000,
            batches: 50,
            seed: 0,
            grid_rho: vec![0.1, 0.3, 0.6],
            grid_tau: vec![0.5, 2.0, 10.0],
            grid_mu: vec![0.5, 1.0, 3.0],
            grid_samples: 100_000,
            b_tau_tau: 2.0,
            b_tau_pairs: 1_000_000,
            variance_samples: 1_000_000,
            softmax_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not applicable to this configuration (for example `m = 0`).
    Skipped,
    /// The configuration violates the check's precondition.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub estimate: f64,
    pub reference: f64,
    pub std_error: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, estimate: f64, reference: f64, std_error: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            estimate,
            reference,
            std_error,
            detail,
        }
    }

    fn not_run(name: &str, status: Status, detail: &str) -> Self {
        Self {
            name: name.into(),
            status,
            estimate: f64::NAN,
            reference: f64::NAN,
            std_error: f64::NAN,
            detail: detail.into(),
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.status, Status::Fail | Status::Rejected)
    }
}

impl VerifyConfig {
    fn params(&self) -> CsbmParams {
        CsbmParams {
            n: self.n,
            a: self.a,
            b: self.b,
            mu: vec![1.0; self.d],
            seed: self.seed,
        }
    }

    fn experiment(&self, noise: NoiseKind, k: usize) -> SnrExperiment {
        let mut exp = SnrExperiment::new(self.params(), noise, vec![1.0; self.d]);
        exp.degree = DegreeLaw::Fixed(k);
        exp.trials = self.trials;
        exp.batches = self.batches;
        exp.seed = self.seed;
        exp
    }
}

/// Runs every check. Estimator errors abort the whole run.
pub fn run_verification(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let params = cfg.params();
    params.validate()?;
    let m_zero = params.homophily() == 0.0;

    if m_zero {
        for name in ["temperature_high_noise", "temperature_grid_sup", "oracle_gate_snr"] {
            out.push(CheckResult::not_run(name, Status::Skipped, "m=0"));
        }
    } else if cfg.k <= 1 {
        for name in ["temperature_high_noise", "temperature_grid_sup"] {
            out.push(CheckResult::not_run(name, Status::Rejected, "requires K=|N(i)|>1"));
        }
    } else {
        out.extend(temperature_checks(cfg)?);
    }
    out.push(k1_control(cfg)?);
    if !m_zero {
        out.push(gate_snr_check(cfg)?);
    }
    out.extend(gap_checks(cfg)?);
    out.push(b_tau_check(cfg)?);
    out.extend(distance_checks(cfg)?);
    out.extend(variance_checks(cfg)?);
    out.push(a_tau_check());
    out.push(concentration_check(cfg)?);
    out.push(expansion_check(cfg)?);
    Ok(out)
}

fn temperature_checks(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let exp = cfg.experiment(NoiseKind::Gaussian { sigma: cfg.sigma }, cfg.k);
    let mut settings = vec![
        SnrSetting::new(cfg.t_low, TheoryGate::None),
        SnrSetting::new(cfg.t_high, TheoryGate::None),
    ];
    settings.extend(cfg.t_grid.iter().map(|&t| SnrSetting::new(t, TheoryGate::None)));
    let sweep = exp.run(&settings)?;
    let diff = sweep.paired_difference(1, 0);
    let high = CheckResult::new(
        "temperature_high_noise",
        diff.difference > 3.0 * diff.std_error,
        sweep.estimates[1].value,
        sweep.estimates[0].value,
        diff.std_error,
        format!(
            "SNR(T={}) - SNR(T={}) = {:.5}, paired se {:.5}, unpaired se {:.5}",
            cfg.t_high, cfg.t_low, diff.difference, diff.std_error, diff.combined_std_error
        ),
    );
    let (best, best_idx) = (2..settings.len())
        .map(|i| (sweep.estimates[i].value, i))
        .fold((f64::NEG_INFINITY, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
    let base = &sweep.estimates[0];
    let sup = CheckResult::new(
        "temperature_grid_sup",
        best >= base.value - base.std_error,
        best,
        base.value,
        base.std_error,
        format!("best grid temperature {}", settings[best_idx].temperature),
    );
    Ok(vec![high, sup])
}

fn k1_control(cfg: &VerifyConfig) -> Result<CheckResult> {
    let exp = cfg.experiment(NoiseKind::Gaussian { sigma: cfg.sigma }, 1);
    let sweep = exp.run(&[
        SnrSetting::new(cfg.t_low, TheoryGate::None),
        SnrSetting::new(cfg.t_high, TheoryGate::None),
    ])?;
    let diff = sweep.paired_difference(1, 0);
    Ok(CheckResult::new(
        "temperature_k1_control",
        diff.difference.abs() <= diff.combined_std_error,
        sweep.estimates[1].value,
        sweep.estimates[0].value,
        diff.combined_std_error,
        format!("|difference| {:.3e}", diff.difference.abs()),
    ))
}

fn gate_snr_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let noise = NoiseKind::Missing {
        rho: cfg.rho,
        tau: cfg.tau,
    };
    let exp = cfg.experiment(noise, cfg.k.max(2));
    let sweep = exp.run(&[
        SnrSetting::new(cfg.gate_temperature, TheoryGate::None),
        SnrSetting::new(cfg.gate_temperature, TheoryGate::Oracle),
    ])?;
    let diff = sweep.paired_difference(1, 0);
    Ok(CheckResult::new(
        "oracle_gate_snr",
        diff.difference > 3.0 * diff.std_error,
        sweep.estimates[1].value,
        sweep.estimates[0].value,
        diff.std_error,
        format!(
            "gated - ungated = {:.5}, paired se {:.5}, unpaired se {:.5}",
            diff.difference, diff.std_error, diff.combined_std_error
        ),
    ))
}

fn gap_checks(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mu = vec![1.0; cfg.d];
    let w = vec![1.0; cfg.d];
    let want = logit_gap(&mu, &w, cfg.rho)?;
    let pair = logit_stats_monte_carlo(&mu, &w, cfg.rho, cfg.tau, cfg.trials, cfg.seed)?;
    Ok([("logit_gap_ungated", &pair.ungated), ("logit_gap_gated", &pair.gated)]
        .into_iter()
        .map(|(name, s)| {
            CheckResult::new(
                name,
                (s.gap - want).abs() <= 3.0 * s.gap_std_error,
                s.gap,
                want,
                s.gap_std_error,
                format!("{:.2} standard errors", (s.gap - want) / s.gap_std_error),
            )
        })
        .collect())
}

fn b_tau_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let est = b_tau_monte_carlo(cfg.b_tau_tau, cfg.b_tau_pairs, cfg.seed)?;
    let want = b_tau(cfg.b_tau_tau);
    let rel = (est.mean - want).abs() / want;
    Ok(CheckResult::new(
        "b_tau",
        rel < 0.01,
        est.mean,
        want,
        est.std_error,
        format!("relative error {rel:.2e}"),
    ))
}

fn distance_checks(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (formula, (gated, same, name)) in [
        (false, true, "distance_ungated_same"),
        (false, false, "distance_ungated_diff"),
        (true, true, "distance_gated_same"),
        (true, false, "distance_gated_diff"),
    ]
    .into_iter()
    .enumerate()
    {
        let mut worst = (0.0f64, 0.0, 0.0, 0.0);
        let mut cell = 0u64;
        for &rho in &cfg.grid_rho {
            for &tau in &cfg.grid_tau {
                for &mu in &cfg.grid_mu {
                    cell += 1;
                    let seed = crate::rng::mix_seed(crate::rng::mix_seed(cfg.seed, formula as u64), cell);
                    let est = distance_monte_carlo(same, mu, rho, tau, gated, cfg.grid_samples, seed)?;
                    let want = expected_distance(same, mu, rho, tau, gated);
                    let z = if est.std_error > 0.0 {
                        (est.mean - want).abs() / est.std_error
                    } else if est.mean == want {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    if z >= worst.0 {
                        worst = (z, est.mean, want, est.std_error);
                    }
                }
            }
        }
        out.push(CheckResult::new(
            name,
            worst.0 <= 3.0,
            worst.1,
            worst.2,
            worst.3,
            format!("worst cell at {:.2} standard errors", worst.0),
        ));
    }
    Ok(out)
}

fn variance_checks(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let (mu, w) = ([1.0], [1.0]);
    let bounds = variance_bounds(&mu, &w, cfg.rho, cfg.tau)?;
    let pair = logit_stats_monte_carlo(&mu, &w, cfg.rho, cfg.tau, cfg.variance_samples, cfg.seed)?;
    let gated = pair.gated.variance_same.max(pair.gated.variance_diff);
    let ungated = pair.ungated.variance_same.min(pair.ungated.variance_diff);
    Ok(vec![
        CheckResult::new(
            "variance_gated_upper",
            gated <= bounds.gated_upper,
            gated,
            bounds.gated_upper,
            f64::NAN,
            "largest class-conditional variance".into(),
        ),
        CheckResult::new(
            "variance_ungated_lower",
            ungated >= bounds.ungated_lower,
            ungated,
            bounds.ungated_lower,
            f64::NAN,
            "smallest class-conditional variance".into(),
        ),
    ])
}

fn a_tau_check() -> CheckResult {
    let mut worst: f64 = 0.0;
    for &(t, tau) in &[(0.0, 1.0), (1.0, 1.0), (0.5, 2.0), (3.0, 10.0), (-2.0, 0.7)] {
        worst = worst.max((a_tau(t, tau) - a_tau_quadrature(t, tau)).abs());
    }
    CheckResult::new(
        "a_tau_closed_form",
        worst < 1e-8,
        worst,
        0.0,
        f64::NAN,
        "largest |closed form - quadrature|".into(),
    )
}

fn concentration_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = stream_rng(cfg.seed, 1);
    let mut violations = 0;
    let mut slack = f64::INFINITY;
    for _ in 0..cfg.softmax_draws {
        let k = rng.random_range(1..=20);
        let scale = rng.random_range(0.01..10.0);
        let e: Vec<f64> = (0..k).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let alpha = softmax(&e, rng.random_range(0.1..10.0));
        let gap = concentration(&alpha) - 1.0 / k as f64;
        slack = slack.min(gap);
        if !concentration_holds(&alpha) {
            violations += 1;
        }
    }
    let uniform = (concentration(&softmax(&[0.7; 9], 1.0)) - 1.0 / 9.0).abs();
    Ok(CheckResult::new(
        "concentration_floor",
        violations == 0 && uniform < 1e-12,
        slack,
        0.0,
        f64::NAN,
        format!("{violations} violations, uniform deviation {uniform:.1e}"),
    ))
}

/// Ratio of first-order errors at `delta/T = 0.05` and `0.025`.
pub fn expansion_ratio(e: &[f64]) -> Result<f64> {
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let delta = e.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    let t = delta / 0.05;
    Ok(softmax_first_order(e, t)?.max_error / softmax_first_order(e, 2.0 * t)?.max_error)
}

fn expansion_check(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = stream_rng(cfg.seed, 2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100 {
        let e: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = expansion_ratio(&e)?;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(CheckResult::new(
        "first_order_decay",
        lo >= 3.5 && hi <= 4.5,
        lo,
        4.0,
        f64::NAN,
        format!("error ratios in [{lo:.3}, {hi:.3}] over 100 random logit vectors"),
    ))
}
