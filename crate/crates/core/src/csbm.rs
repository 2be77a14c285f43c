//! Two-class contextual stochastic block model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, LabeledDataset, Split};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsbmParams {
    pub n: usize,
    /// Intra-class intensity; same-class pairs link with probability `a / n`.
    pub a: f64,
    /// Inter-class intensity; cross-class pairs link with probability `b / n`.
    pub b: f64,
    pub mu: Vec<f64>,
    pub seed: u64,
}

impl CsbmParams {
    /// Checks `a >= b > 0` and that both edge probabilities are at most 1.
    ///
    /// `a == b` is accepted so the structureless control (`m = 0`) can be
    /// sampled; the theorem checks require `a > b` separately.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("CSBM needs n > 0".into()));
        }
        if !(self.b > 0.0 && self.a >= self.b) {
            return Err(Error::InvalidParameter(format!(
                "CSBM needs a >= b > 0, got a={}, b={}",
                self.a, self.b
            )));
        }
        let n = self.n as f64;
        if self.a / n > 1.0 || self.b / n > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "edge probabilities a/n={} and b/n={} must be at most 1",
                self.a / n,
                self.b / n
            )));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mu must be finite".into()));
        }
        Ok(())
    }

    /// Homophily `m = (a - b) / (a + b)`.
    pub fn homophily(&self) -> f64 {
        (self.a - self.b) / (self.a + self.b)
    }

    pub fn p_same(&self) -> f64 {
        self.a / self.n as f64
    }

    pub fn p_diff(&self) -> f64 {
        self.b / self.n as f64
    }
}

/// Draws a CSBM world: uniform ±1 labels (classes 1 and 0), one Bernoulli
/// draw per unordered pair, clean features `y_i * mu`. No self-loops, no
/// split assignment. Deterministic given the seed.
pub fn csbm_sample(p: &CsbmParams) -> Result<LabeledDataset> {
    p.validate()?;
    let n = p.n;
    let mut label_rng = stream_rng(p.seed, 0);
    let labels: Vec<usize> = (0..n).map(|_| usize::from(label_rng.random::<bool>())).collect();

    let (ps, pd) = (p.p_same(), p.p_diff());
    let mut edges = Vec::new();
    for i in 0..n {
        let mut rng = stream_rng(p.seed, i as u64 + 1);
        for j in i + 1..n {
            let prob = if labels[i] == labels[j] { ps } else { pd };
            if rng.random::<f64>() < prob {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges, true)?;

    let d = p.mu.len();
    let mut values = Vec::with_capacity(n * d);
    for &c in &labels {
        let y = if c == 1 { 1.0 } else { -1.0 };
        values.extend(p.mu.iter().map(|m| y * m));
    }
    let features = FeatureMatrix::new(n, d, values)?;
    LabeledDataset::new(graph, features, labels, 2, &vec![Split::None; n])
}

/// Mean of `y_i * y_j` over all directed edges, in ±1 coding. This is the
/// plug-in estimate of the homophily `m`.
pub fn neighbor_label_mean(ds: &LabeledDataset) -> Result<f64> {
    if ds.num_classes != 2 {
        return Err(Error::InvalidParameter(format!(
            "neighbor_label_mean needs a binary dataset, got C={}",
            ds.num_classes
        )));
    }
    let e = ds.graph.num_edges();
    if e == 0 {
        return Err(Error::NoEdges);
    }
    let y = ds.signed_labels();
    let total: f64 = ds.graph.edges().map(|(i, j)| y[i] * y[j]).sum();
    Ok(total / e as f64)
}
