use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_weights, MeanEstimate};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const CHUNK: usize = 10_000;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sumsq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sumsq += o.sumsq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.n as f64;
        ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn estimate(&self) -> MeanEstimate {
        MeanEstimate {
            mean: self.mean(),
            std_error: (self.variance() / self.n as f64).sqrt(),
            samples: self.n,
        }
    }
}

/// Splits `samples` into fixed-size chunks, each with its own stream, and
/// merges the per-chunk accumulators in chunk order.
fn chunked<A, F>(samples: usize, seed: u64, init: A, f: F) -> Vec<A>
where
    A: Clone + Send + Sync,
    F: Fn(&mut ChaCha8Rng, usize, &mut A) + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut acc = init.clone();
            f(&mut rng, n, &mut acc);
            acc
        })
        .collect()
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {samples}")));
    }
    Ok(())
}

fn check_missing(rho: f64, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) || !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("need rho in [0, 1] and tau >= 0, got {rho}, {tau}")));
    }
    Ok(())
}

/// Monte-Carlo `E|xi_1 - xi_2|` over `pairs` independent Gaussian pairs.
pub fn b_tau_monte_carlo(tau: f64, pairs: usize, seed: u64) -> Result<MeanEstimate> {
    check_samples(pairs)?;
    check_missing(0.0, tau)?;
    let parts = chunked(pairs, seed, Moments::default(), |rng, n, acc| {
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            acc.push(tau * (a - b).abs());
        }
    });
    Ok(fold(&parts).estimate())
}

fn fold(parts: &[Moments]) -> Moments {
    let mut m = Moments::default();
    for p in parts {
        m.merge(p);
    }
    m
}

/// One coordinate under missing noise: `(observed value, kept)`.
fn missing_coord<R: Rng>(rng: &mut R, signal: f64, rho: f64, tau: f64) -> (f64, bool) {
    let u: f64 = rng.random();
    let xi: f64 = rng.sample(StandardNormal);
    if u >= rho {
        (signal, true)
    } else {
        (tau * xi, false)
    }
}

/// Monte-Carlo `E|h_il - h_jl|` for one coordinate with signal `mu_l`,
/// optionally after the oracle gate.
pub fn distance_monte_carlo(
    same_class: bool,
    mu_l: f64,
    rho: f64,
    tau: f64,
    gated: bool,
    samples: usize,
    seed: u64,
) -> Result<MeanEstimate> {
    check_samples(samples)?;
    check_missing(rho, tau)?;
    let yj = if same_class { 1.0 } else { -1.0 };
    let parts = chunked(samples, seed, Moments::default(), |rng, n, acc| {
        for _ in 0..n {
            let (hi, ri) = missing_coord(rng, mu_l, rho, tau);
            let (hj, rj) = missing_coord(rng, yj * mu_l, rho, tau);
            let d = if gated {
                let gi = if ri { hi } else { 0.0 };
                let gj = if rj { hj } else { 0.0 };
                (gi - gj).abs()
            } else {
                (hi - hj).abs()
            };
            acc.push(d);
        }
    });
    Ok(fold(&parts).estimate())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitConditioning {
    pub rho: f64,
    pub tau: f64,
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Class-conditional moments of a weighted ℓ1 logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitStats {
    pub mean_same: f64,
    pub mean_diff: f64,
    /// `mean_same - mean_diff`.
    pub gap: f64,
    pub gap_std_error: f64,
    pub variance_same: f64,
    pub variance_diff: f64,
    pub samples: usize,
    pub conditioning: LogitConditioning,
}

/// Ungated and oracle-gated statistics computed from the same draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitPair {
    pub ungated: LogitStats,
    pub gated: LogitStats,
}

/// Samples `samples` same-class and `samples` cross-class pairs under
/// coordinate-missing noise and records both logits for each.
pub fn logit_stats_monte_carlo(mu: &[f64], w: &[f64], rho: f64, tau: f64, samples: usize, seed: u64) -> Result<LogitPair> {
    check_weights(mu, w)?;
    check_missing(rho, tau)?;
    check_samples(samples)?;
    let d = mu.len();
    // [ungated same, ungated diff, gated same, gated diff]
    let parts = chunked(samples, seed, [Moments::default(); 4], |rng, n, acc| {
        for _ in 0..n {
            for (c, yj) in [(0, 1.0), (1, -1.0)] {
                let (mut e, mut g) = (0.0, 0.0);
                for l in 0..d {
                    let (hi, ri) = missing_coord(rng, mu[l], rho, tau);
                    let (hj, rj) = missing_coord(rng, yj * mu[l], rho, tau);
                    e -= w[l] * (hi - hj).abs();
                    let gi = if ri { hi } else { 0.0 };
                    let gj = if rj { hj } else { 0.0 };
                    g -= w[l] * (gi - gj).abs();
                }
                acc[c].push(e);
                acc[2 + c].push(g);
            }
        }
    });
    let mut m = [Moments::default(); 4];
    for p in &parts {
        for (a, b) in m.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    let conditioning = LogitConditioning {
        rho,
        tau,
        w: w.to_vec(),
        mu: mu.to_vec(),
    };
    let stats = |same: &Moments, diff: &Moments| LogitStats {
        mean_same: same.mean(),
        mean_diff: diff.mean(),
        gap: same.mean() - diff.mean(),
        gap_std_error: (same.variance() / same.n as f64 + diff.variance() / diff.n as f64).sqrt(),
        variance_same: same.variance(),
        variance_diff: diff.variance(),
        samples,
        conditioning: conditioning.clone(),
    };
    Ok(LogitPair {
        ungated: stats(&m[0], &m[1]),
        gated: stats(&m[2], &m[3]),
    })
}
