//! TOML experiment configuration. Every table rejects unknown keys.
//!
//! ```toml
//! command = "train"            # optional; must match the subcommand
//! methods = ["GAT", "Temp_only"]
//! seeds = 10
//!
//! [dataset]
//! path = "data/cora.txt"       # plain-text format of `tempgate::io`
//! normalize = true             # row-normalize features
//!
//! [model]
//! hidden_dim = 8
//! heads = 8
//!
//! [train]
//! lr = 0.005
//! epochs = 400
//!
//! [sweep]
//! sigma = [0.0, 0.5, 1.0, 2.0]
//! rho = [0.0, 0.2, 0.4, 0.6]
//! tau = 1.0
//!
//! [verify]                     # fields of tempgate::theory::VerifyConfig
//! trials = 100000
//!
//! [grad_check]
//! nodes = 20
//!
//! [rank]
//! inputs = ["cora.csv", "citeseer.csv"]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tempgate::attention::{AttentionSpec, Method};
use tempgate::csbm::CsbmParams;
use tempgate::theory::verify::VerifyConfig;
use tempgate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    CsbmVerify,
    NoiseSweep,
    GradCheck,
    Rank,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    /// Table-1 method names.
    pub methods: Vec<String>,
    /// Number of seeds; runs use `train.seed, train.seed + 1, ...`.
    pub seeds: Option<usize>,
    pub out: Option<PathBuf>,
    pub dataset: Option<DatasetConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
    pub grad_check: GradCheckConfig,
    pub rank: RankConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub csbm: Option<CsbmParams>,
    pub normalize: bool,
    /// Split fractions for CSBM worlds, which come without a split.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            csbm: None,
            normalize: false,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub output_heads: usize,
    /// Per-head hidden width of attention models.
    pub hidden_dim: usize,
    pub gcn_hidden_dim: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub init_temp: f64,
    pub gate_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 8,
            output_heads: 1,
            hidden_dim: 8,
            gcn_hidden_dim: 16,
            dropout: 0.0,
            leaky_slope: 0.2,
            init_temp: 1.0,
            gate_bias_init: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, method: Method, in_dim: usize, classes: usize) -> AttentionSpec {
        let gcn = method == Method::Gcn;
        let hidden = if gcn { self.gcn_hidden_dim } else { self.hidden_dim };
        let mut s = AttentionSpec::for_method(method, in_dim, hidden, classes).with_layers(self.layers);
        if !gcn {
            s = s.with_heads(self.heads, self.output_heads);
        }
        s.dropout = self.dropout;
        s.leaky_slope = self.leaky_slope;
        s.init_temp = self.init_temp;
        s.gate_bias_init = self.gate_bias_init;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Gaussian noise levels.
    pub sigma: Vec<f64>,
    /// Missing probabilities.
    pub rho: Vec<f64>,
    /// Scale of the replacement draws under missing noise.
    pub tau: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma: Vec::new(),
            rho: Vec::new(),
            tau: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub nodes: usize,
    pub in_dim: usize,
    pub classes: usize,
    pub edge_prob: f64,
    pub hidden_dim: usize,
    pub heads: usize,
    pub output_heads: usize,
    pub lambda_gate: f64,
    pub tolerance: f64,
    pub embedding_draws: usize,
    pub embedding_tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            nodes: 20,
            in_dim: 5,
            classes: 3,
            edge_prob: 0.2,
            hidden_dim: 4,
            heads: 2,
            output_heads: 2,
            lambda_gate: 0.1,
            tolerance: 1e-4,
            embedding_draws: 1000,
            embedding_tolerance: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    /// Result tables of `train`, one per dataset.
    pub inputs: Vec<PathBuf>,
    /// Column of the summary rows that is ranked (higher is better).
    pub metric: String,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            metric: "test_metric".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Parses `methods`, defaulting to all eleven when `all_by_default`.
    pub fn methods(&self, all_by_default: bool) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            if all_by_default {
                return Ok(Method::ALL.to_vec());
            }
            bail!("config error: the method list is empty");
        }
        let mut out = Vec::with_capacity(self.methods.len());
        for name in &self.methods {
            let m: Method = name.parse()?;
            if out.contains(&m) {
                bail!("config error: method {m} listed twice");
            }
            out.push(m);
        }
        Ok(out)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        let k = self.seeds.unwrap_or(1) as u64;
        (0..k).map(|s| self.train.seed + s).collect()
    }

    pub fn check_command(&self, cmd: Command) -> Result<()> {
        match self.command {
            Some(c) if c != cmd => bail!("config is for {c:?} but {cmd:?} was requested"),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = ExperimentConfig::from_toml("methods = [\"GAT\"]\n[train]\nlr = 0.01\n").unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.epochs, 400);
        assert_eq!(c.methods(false).unwrap(), vec![Method::Gat]);
        assert_eq!(c.seed_list(), vec![0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("method = [\"GAT\"]").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nlearning_rate = 0.1").is_err());
        assert!(ExperimentConfig::from_toml("[verify]\ntrails = 10").is_err());
        assert!(ExperimentConfig::from_toml("[dataset]\nnormalise = true").is_err());
    }

    #[test]
    fn method_list_errors() {
        let empty = ExperimentConfig::default();
        assert!(empty.methods(false).is_err());
        assert_eq!(empty.methods(true).unwrap().len(), 11);
        let bad = ExperimentConfig::from_toml("methods = [\"GAT3\"]").unwrap();
        assert!(bad.methods(false).is_err());
        let dup = ExperimentConfig::from_toml("methods = [\"GAT\", \"GAT\"]").unwrap();
        assert!(dup.methods(false).is_err());
    }

    #[test]
    fn command_mismatch() {
        let c = ExperimentConfig::from_toml("command = \"rank\"").unwrap();
        assert!(c.check_command(Command::Rank).is_ok());
        assert!(c.check_command(Command::Train).is_err());
    }
}
