use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::montecarlo::Moments;
use super::{check_weights, concentration_holds, softmax};
use crate::csbm::{csbm_sample, CsbmParams};
use crate::error::{Error, Result};
use crate::noise::{apply_noise, oracle_gate, MissingMask, NoiseKind, NoiseSetting};
use crate::rng::stream_rng;

/// How the size `K` of a target's neighborhood is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "law", content = "k", rename_all = "snake_case")]
pub enum DegreeLaw {
    /// Every target has exactly `K` neighbors, each sharing the target's
    /// label with probability `(1 + m) / 2`.
    Fixed(usize),
    /// Same-class and cross-class neighbor counts follow the CSBM binomials;
    /// targets with `K <= 1` are redrawn.
    Csbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryGate {
    None,
    /// Zero every coordinate the missing-noise replaced (`g = r`).
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSetting {
    pub temperature: f64,
    pub gate: TheoryGate,
}

impl SnrSetting {
    pub fn new(temperature: f64, gate: TheoryGate) -> Self {
        Self { temperature, gate }
    }
}

/// What an estimate was conditioned on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrConditioning {
    pub degree: DegreeLaw,
    pub temperature: f64,
    pub noise: NoiseKind,
    pub gate: TheoryGate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub value: f64,
    /// Batch-means standard error.
    pub std_error: f64,
    pub trials: usize,
    pub conditioning: SnrConditioning,
}

/// Neighborhood-resampling SNR estimator.
///
/// Each trial draws a target label, a neighborhood, and noisy features for
/// the target and its neighbors, then scores every requested setting on
/// those same draws. Settings compared within one sweep therefore share
/// their randomness, which makes paired differences far tighter than the
/// individual standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrExperiment {
    pub params: CsbmParams,
    pub noise: NoiseKind,
    pub w: Vec<f64>,
    pub degree: DegreeLaw,
    pub trials: usize,
    pub batches: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSweep {
    pub estimates: Vec<SnrEstimate>,
    /// Per-batch SNR for each setting, `batch_values[setting][batch]`.
    pub batch_values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    /// `value[a] - value[b]`.
    pub difference: f64,
    /// Batch-means standard error of the per-batch differences.
    pub std_error: f64,
    /// `sqrt(se_a^2 + se_b^2)`, ignoring the shared draws.
    pub combined_std_error: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SnrSweep {
    pub fn paired_difference(&self, a: usize, b: usize) -> PairedDifference {
        let diffs: Vec<f64> = self.batch_values[a]
            .iter()
            .zip(&self.batch_values[b])
            .map(|(x, y)| x - y)
            .collect();
        let (_, sd) = mean_sd(&diffs);
        let (ea, eb) = (&self.estimates[a], &self.estimates[b]);
        PairedDifference {
            difference: ea.value - eb.value,
            std_error: sd / (diffs.len() as f64).sqrt(),
            combined_std_error: ea.std_error.hypot(eb.std_error),
        }
    }
}

/// SNR from the moments of `R` in each class.
fn snr_from(pos: &Moments, neg: &Moments) -> Result<f64> {
    if pos.n < 2 || neg.n < 2 {
        return Err(Error::DegenerateVariance(format!(
            "class sizes {} and {} are too small",
            pos.n, neg.n
        )));
    }
    let var = pos.variance() + neg.variance();
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance(
            "R has zero variance in both classes".into(),
        ));
    }
    Ok((pos.mean() - neg.mean()) / var.sqrt())
}

impl SnrExperiment {
    /// Fixed `K = 10`, 10^5 trials in 50 batches, seeded from `params`.
    pub fn new(params: CsbmParams, noise: NoiseKind, w: Vec<f64>) -> Self {
        let seed = params.seed;
        Self {
            params,
            noise,
            w,
            degree: DegreeLaw::Fixed(10),
            trials: 100_000,
            batches: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.noise.validate()?;
        check_weights(&self.params.mu, &self.w)?;
        if self.trials < 1000 {
            return Err(Error::InvalidParameter(format!("need at least 1000 trials, got {}", self.trials)));
        }
        if self.batches < 2 || self.trials < 4 * self.batches {
            return Err(Error::InvalidParameter(format!(
                "{} batches do not fit {} trials",
                self.batches, self.trials
            )));
        }
        match self.degree {
            DegreeLaw::Fixed(0) => Err(Error::InvalidParameter("fixed K must be >= 1".into())),
            DegreeLaw::Csbm if self.params.n < 4 => Err(Error::InvalidParameter("CSBM degree law needs n >= 4".into())),
            _ => Ok(()),
        }
    }

    /// Scores every setting on shared draws.
    pub fn run(&self, settings: &[SnrSetting]) -> Result<SnrSweep> {
        self.validate()?;
        if settings.is_empty() {
            return Err(Error::InvalidParameter("no SNR settings requested".into()));
        }
        if let Some(s) = settings.iter().find(|s| !(s.temperature > 0.0)) {
            return Err(Error::NonPositiveTemperature(s.temperature));
        }
        let b = self.batches;
        let per_batch: Vec<Vec<[Moments; 2]>> = (0..b)
            .into_par_iter()
            .map(|k| {
                let start = k * self.trials / b;
                let end = (k + 1) * self.trials / b;
                self.batch(start..end, settings)
            })
            .collect();

        let mut batch_values = vec![Vec::with_capacity(b); settings.len()];
        let mut pooled = vec![[Moments::default(); 2]; settings.len()];
        for batch in &per_batch {
            for (s, m) in batch.iter().enumerate() {
                batch_values[s].push(snr_from(&m[0], &m[1])?);
                pooled[s][0].merge(&m[0]);
                pooled[s][1].merge(&m[1]);
            }
        }
        let estimates = settings
            .iter()
            .zip(&pooled)
            .zip(&batch_values)
            .map(|((s, m), bv)| {
                Ok(SnrEstimate {
                    value: snr_from(&m[0], &m[1])?,
                    std_error: mean_sd(bv).1 / (b as f64).sqrt(),
                    trials: self.trials,
                    conditioning: SnrConditioning {
                        degree: self.degree,
                        temperature: s.temperature,
                        noise: self.noise,
                        gate: s.gate,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(SnrSweep {
            estimates,
            batch_values,
        })
    }

    fn batch(&self, trials: std::ops::Range<usize>, settings: &[SnrSetting]) -> Vec<[Moments; 2]> {
        let d = self.params.mu.len();
        let m = self.params.homophily();
        let n = self.params.n;
        let half = n / 2;
        let same_law = Binomial::new((half - 1) as u64, self.params.p_same().min(1.0)).ok();
        let diff_law = Binomial::new((n - half) as u64, self.params.p_diff().min(1.0)).ok();

        let mut acc = vec![[Moments::default(); 2]; settings.len()];
        let mut labels = Vec::new();
        let mut target = vec![0.0; d];
        let mut target_kept = vec![true; d];
        let mut row = vec![0.0; d];
        let mut kept = vec![true; d];
        let (mut e, mut eg) = (Vec::new(), Vec::new());

        for t in trials {
            let mut rng = stream_rng(self.seed, t as u64);
            let yi = if rng.random::<bool>() { 1.0 } else { -1.0 };

            labels.clear();
            match self.degree {
                DegreeLaw::Fixed(k) => {
                    let p_same = (1.0 + m) / 2.0;
                    labels.extend((0..k).map(|_| if rng.random::<f64>() < p_same { yi } else { -yi }));
                }
                DegreeLaw::Csbm => {
                    let (sl, dl) = (same_law.as_ref().unwrap(), diff_law.as_ref().unwrap());
                    loop {
                        let s = sl.sample(&mut rng) as usize;
                        let c = dl.sample(&mut rng) as usize;
                        if s + c > 1 {
                            labels.extend(std::iter::repeat_n(yi, s));
                            labels.extend(std::iter::repeat_n(-yi, c));
                            break;
                        }
                    }
                }
            }

            for (v, mu) in target.iter_mut().zip(&self.params.mu) {
                *v = yi * mu;
            }
            self.noise.perturb_row(&mut target, &mut target_kept, &mut rng);

            e.clear();
            eg.clear();
            for &yj in &labels {
                for (v, mu) in row.iter_mut().zip(&self.params.mu) {
                    *v = yj * mu;
                }
                self.noise.perturb_row(&mut row, &mut kept, &mut rng);
                let (mut plain, mut gated) = (0.0, 0.0);
                for l in 0..d {
                    plain -= self.w[l] * (target[l] - row[l]).abs();
                    let gi = if target_kept[l] { target[l] } else { 0.0 };
                    let gj = if kept[l] { row[l] } else { 0.0 };
                    gated -= self.w[l] * (gi - gj).abs();
                }
                e.push(plain);
                eg.push(gated);
            }

            let class = usize::from(yi < 0.0);
            for (s, a) in settings.iter().zip(acc.iter_mut()) {
                let logits = match s.gate {
                    TheoryGate::None => &e,
                    TheoryGate::Oracle => &eg,
                };
                let alpha = softmax(logits, s.temperature);
                debug_assert!(concentration_holds(&alpha));
                let r: f64 = alpha.iter().zip(&labels).map(|(a, y)| a * y).sum();
                a[class].push(r);
            }
        }
        acc
    }
}

/// SNR for a single setting under `exp`.
pub fn snr_monte_carlo(exp: &SnrExperiment, setting: SnrSetting) -> Result<SnrEstimate> {
    Ok(exp.run(&[setting])?.estimates.remove(0))
}

/// Whole-graph cross-check: samples one CSBM graph, perturbs its features,
/// and scores every node with more than one neighbor. The standard error
/// uses batch means over contiguous blocks of scored nodes.
pub fn snr_whole_graph(
    params: &CsbmParams,
    noise: &NoiseSetting,
    w: &[f64],
    setting: SnrSetting,
    batches: usize,
) -> Result<SnrEstimate> {
    check_weights(&params.mu, w)?;
    if !(setting.temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(setting.temperature));
    }
    let ds = csbm_sample(params)?;
    let (features, mask) = match noise.kind {
        NoiseKind::Missing { rho, tau } => {
            let (f, m) = crate::noise::apply_missing(&ds.features, rho, tau, noise.seed)?;
            (f, m)
        }
        _ => {
            let f = apply_noise(&ds.features, noise)?;
            let m = MissingMask::new(f.rows(), f.cols(), vec![true; f.rows() * f.cols()])?;
            (f, m)
        }
    };
    let h = match setting.gate {
        TheoryGate::None => features,
        TheoryGate::Oracle => oracle_gate(&features, &mask)?,
    };
    let y = ds.signed_labels();
    let mut scored = Vec::new();
    for i in 0..ds.num_nodes() {
        let nbrs = ds.graph.neighbors(i);
        if nbrs.len() <= 1 {
            continue;
        }
        let e: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                -h.row(i)
                    .iter()
                    .zip(h.row(j))
                    .zip(w)
                    .map(|((a, b), wl)| wl * (a - b).abs())
                    .sum::<f64>()
            })
            .collect();
        let alpha = softmax(&e, setting.temperature);
        let r: f64 = alpha.iter().zip(nbrs).map(|(a, &j)| a * y[j]).sum();
        scored.push((y[i], r));
    }
    if batches < 2 || scored.len() < 4 * batches {
        return Err(Error::InvalidParameter(format!(
            "{} scored nodes cannot fill {batches} batches",
            scored.len()
        )));
    }
    let moments = |part: &[(f64, f64)]| {
        let mut m = [Moments::default(); 2];
        for &(yi, r) in part {
            m[usize::from(yi < 0.0)].push(r);
        }
        m
    };
    let all = moments(&scored);
    let per: Vec<f64> = (0..batches)
        .map(|k| {
            let part = &scored[k * scored.len() / batches..(k + 1) * scored.len() / batches];
            let m = moments(part);
            snr_from(&m[0], &m[1])
        })
        .collect::<Result<_>>()?;
    Ok(SnrEstimate {
        value: snr_from(&all[0], &all[1])?,
        std_error: mean_sd(&per).1 / (batches as f64).sqrt(),
        trials: scored.len(),
        conditioning: SnrConditioning {
            degree: DegreeLaw::Csbm,
            temperature: setting.temperature,
            noise: noise.kind,
            gate: setting.gate,
        },
    })
}
