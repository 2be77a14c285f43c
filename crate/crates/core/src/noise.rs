//! Feature-noise generators for the two-class theory and the controlled
//! noise sweeps, plus the oracle gate that undoes coordinate-missing noise.
//!
//! Row `i` of a matrix draws from stream `i` of the seeded generator, one
//! coordinate at a time, so outputs are the same under any schedule.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    /// `h = clean + sigma * eps`, `eps ~ N(0, I)`.
    Gaussian { sigma: f64 },
    /// Each coordinate is kept with probability `1 - rho`, otherwise
    /// replaced by a `N(0, tau^2)` draw.
    Missing { rho: f64, tau: f64 },
}

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::None => Ok(()),
            NoiseKind::Gaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            NoiseKind::Gaussian { sigma } => Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}"))),
            NoiseKind::Missing { rho, tau } => {
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::InvalidParameter(format!("rho must lie in [0, 1], got {rho}")));
                }
                if !(tau >= 0.0 && tau.is_finite()) {
                    return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
                }
                Ok(())
            }
        }
    }

    /// Perturbs one feature row in place. `kept[l]` records whether
    /// coordinate `l` still carries its clean value.
    pub fn perturb_row<R: Rng + ?Sized>(&self, row: &mut [f64], kept: &mut [bool], rng: &mut R) {
        match *self {
            NoiseKind::None => kept.fill(true),
            NoiseKind::Gaussian { sigma } => {
                for v in row.iter_mut() {
                    let eps: f64 = rng.sample(StandardNormal);
                    *v += sigma * eps;
                }
                kept.fill(true);
            }
            NoiseKind::Missing { rho, tau } => {
                for (v, k) in row.iter_mut().zip(kept.iter_mut()) {
                    // both draws always happen so that streams stay aligned across rho
                    let u: f64 = rng.random();
                    let xi: f64 = rng.sample(StandardNormal);
                    *k = u >= rho;
                    if !*k {
                        *v = tau * xi;
                    }
                }
            }
        }
    }
}

/// A noise law together with its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSetting {
    pub kind: NoiseKind,
    pub seed: u64,
}

/// Realized keep-mask of coordinate-missing noise (`r_il` in {0, 1}).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    rows: usize,
    cols: usize,
    kept: Vec<bool>,
}

impl MissingMask {
    pub fn new(rows: usize, cols: usize, kept: Vec<bool>) -> Result<Self> {
        if kept.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "MissingMask::new",
                detail: format!("{} flags for {rows}x{cols}", kept.len()),
            });
        }
        Ok(Self { rows, cols, kept })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn missing_fraction(&self) -> f64 {
        self.kept.iter().filter(|&&k| !k).count() as f64 / self.kept.len().max(1) as f64
    }
}

fn perturb(f: &FeatureMatrix, kind: NoiseKind, seed: u64) -> (FeatureMatrix, Vec<bool>) {
    let (n, d) = (f.rows(), f.cols());
    let mut values = f.values().to_vec();
    let mut kept = vec![true; n * d];
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        kind.perturb_row(&mut values[i * d..(i + 1) * d], &mut kept[i * d..(i + 1) * d], &mut rng);
    }
    let out = FeatureMatrix::new(n, d, values).expect("noise keeps entries finite");
    (out, kept)
}

pub fn apply_gaussian(f: &FeatureMatrix, sigma: f64, seed: u64) -> Result<FeatureMatrix> {
    let kind = NoiseKind::Gaussian { sigma };
    kind.validate()?;
    Ok(perturb(f, kind, seed).0)
}

pub fn apply_missing(f: &FeatureMatrix, rho: f64, tau: f64, seed: u64) -> Result<(FeatureMatrix, MissingMask)> {
    let kind = NoiseKind::Missing { rho, tau };
    kind.validate()?;
    let (out, kept) = perturb(f, kind, seed);
    let mask = MissingMask::new(f.rows(), f.cols(), kept)?;
    Ok((out, mask))
}

pub fn apply_noise(f: &FeatureMatrix, setting: &NoiseSetting) -> Result<FeatureMatrix> {
    setting.kind.validate()?;
    Ok(perturb(f, setting.kind, setting.seed).0)
}

/// `R ⊙ F`: zeroes exactly the coordinates the missing-noise replaced.
pub fn oracle_gate(f: &FeatureMatrix, mask: &MissingMask) -> Result<FeatureMatrix> {
    if f.rows() != mask.rows || f.cols() != mask.cols {
        return Err(Error::ShapeMismatch {
            op: "oracle_gate",
            detail: format!("features {}x{} vs mask {}x{}", f.rows(), f.cols(), mask.rows, mask.cols),
        });
    }
    let values = f
        .values()
        .iter()
        .zip(&mask.kept)
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    FeatureMatrix::new(f.rows(), f.cols(), values)
}
