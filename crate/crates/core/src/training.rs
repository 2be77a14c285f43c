//! Full-batch node classification: loss, gate regularizer, Adam, the
//! training loop with best-validation model selection, and metrics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionSpec, GraphContext, Model};
use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, LabeledDataset, Split};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MicroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lambda_gate: f64,
    pub seed: u64,
    pub runs: usize,
    pub metric: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 5e-4,
            epochs: 400,
            lambda_gate: 1e-5,
            seed: 0,
            runs: 1,
            metric: Metric::Accuracy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.runs == 0 {
            return Err(Error::InvalidParameter("need lr > 0, epochs > 0 and runs > 0".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda_gate >= 0.0) {
            return Err(Error::InvalidParameter("weight_decay and lambda_gate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub test_metric: f64,
    pub val_metric: f64,
    pub train_metric: f64,
    pub best_epoch: usize,
    /// Final learned temperature of each layer; empty without temperature.
    pub learned_temperatures: Vec<f64>,
    /// Final mean gate activation of each layer; empty without gates.
    pub gate_means: Vec<f64>,
    /// Training objective at every epoch.
    pub losses: Vec<f64>,
}

/// Mean negative log-likelihood of `labels` over `rows`, from a stabilized
/// log-softmax.
pub fn cross_entropy(logits: &Tensor, labels: &[usize], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut total = 0.0;
    for &i in rows {
        let row = logits.row(i);
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    Ok(total / rows.len() as f64)
}

/// `lambda * sum_l mean(g_l)` on the tape, or `None` when nothing is gated
/// or `lambda` is zero.
pub fn gate_regularizer(tape: &mut Tape, gates: &[Var], lambda: f64) -> Option<Var> {
    if gates.is_empty() || lambda == 0.0 {
        return None;
    }
    let means: Vec<Var> = gates.iter().map(|&g| tape.mean(g)).collect();
    let mut total = means[0];
    for &m in &means[1..] {
        total = tape.add(total, m).expect("scalars");
    }
    Some(tape.scale(total, lambda))
}

/// Value of the regularizer for given per-layer gate means.
pub fn gate_regularizer_value(gate_means: &[f64], lambda: f64) -> f64 {
    lambda * gate_means.iter().sum::<f64>()
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update. Weight decay is added to the gradient
/// as `weight_decay * p`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!(
                "{} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[k].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("slot {k}: param {:?}, grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (idx, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let grad = gv + weight_decay * *pv;
            m[idx] = ADAM_BETA1 * m[idx] + (1.0 - ADAM_BETA1) * grad;
            v[idx] = ADAM_BETA2 * v[idx] + (1.0 - ADAM_BETA2) * grad * grad;
            *pv -= lr * (m[idx] / bc1) / ((v[idx] / bc2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

pub fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            // first maximum wins ties
            (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyMask);
    }
    let hits = rows.iter().filter(|&&i| pred[i] == labels[i]).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Micro-averaged F1 from pooled one-vs-rest confusion counts.
pub fn micro_f1(pred: &[usize], labels: &[usize], rows: &[usize], num_classes: usize) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for c in 0..num_classes {
        for &i in rows {
            match (pred[i] == c, labels[i] == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

fn mask_rows(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Everything a forward pass needs that does not change between epochs.
pub struct Prepared {
    pub ctx: GraphContext,
    pub x: Tensor,
    pub labels: Arc<Vec<usize>>,
    pub train: Arc<Vec<usize>>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub num_classes: usize,
}

impl Prepared {
    /// Adds self-loops and flattens the features.
    pub fn new(ds: &LabeledDataset) -> Result<Self> {
        ds.validate()?;
        let graph = ds.graph.add_self_loops();
        let f = &ds.features;
        Ok(Self {
            ctx: GraphContext::new(&graph)?,
            x: Tensor::new(f.rows(), f.cols(), f.values().to_vec())?,
            labels: Arc::new(ds.labels.clone()),
            train: Arc::new(mask_rows(&ds.train_mask)),
            val: mask_rows(&ds.val_mask),
            test: mask_rows(&ds.test_mask),
            num_classes: ds.num_classes,
        })
    }
}

/// Deterministic forward pass; returns class scores and per-layer gate means.
pub fn infer(model: &Model, data: &Prepared) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let x = tape.constant(data.x.clone());
    let out = model.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &data.ctx, x, None)?;
    let gates = out.gates().iter().map(|&g| tape.value(g).mean()).collect();
    Ok((tape.value(out.logits).clone(), gates))
}

pub fn evaluate(model: &Model, data: &Prepared, rows: &[usize], metric: Metric) -> Result<f64> {
    let (logits, _) = infer(model, data)?;
    let pred = predictions(&logits);
    match metric {
        Metric::Accuracy => accuracy(&pred, &data.labels, rows),
        Metric::MicroF1 => micro_f1(&pred, &data.labels, rows, data.num_classes),
    }
}

/// Trains one model with `cfg.seed`. The reported metrics come from the
/// epoch with the best validation score (earliest on ties); the training
/// split stands in for validation when no validation nodes exist.
pub fn train(spec: &AttentionSpec, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = Prepared::new(ds)?;
    train_prepared(spec, &data, cfg)
}

pub fn train_prepared(spec: &AttentionSpec, data: &Prepared, cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut init_rng = stream_rng(cfg.seed, 0);
    let mut dropout_rng = stream_rng(cfg.seed, 1);
    let mut model = Model::new(spec.clone(), &mut init_rng)?;
    let mut adam = AdamState::new(&model.tensors());
    let score = |pred: &[usize], rows: &[usize]| match cfg.metric {
        Metric::Accuracy => accuracy(pred, &data.labels, rows),
        Metric::MicroF1 => micro_f1(pred, &data.labels, rows, data.num_classes),
    };
    let val_rows: &[usize] = if data.val.is_empty() { &data.train } else { &data.val };

    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(data.x.clone());
        let out = model.forward(&mut tape, &data.ctx, x, Some(&mut dropout_rng))?;
        let mut loss = tape.cross_entropy(out.logits, data.labels.clone(), data.train.clone())?;
        if let Some(reg) = gate_regularizer(&mut tape, &out.gates(), cfg.lambda_gate) {
            loss = tape.add(loss, reg)?;
        }
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss: value });
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let params = out.params();
        let mut tensors = model.tensors_mut();
        let g: Vec<Tensor> = params
            .iter()
            .zip(tensors.iter())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect();
        adam_step(&mut tensors, &g, &mut adam, cfg.lr, cfg.weight_decay)?;

        let (logits, _) = infer(&model, data)?;
        let pred = predictions(&logits);
        let val = score(&pred, val_rows)?;
        if best.is_none_or(|b| val > b.0) {
            let test = if data.test.is_empty() { f64::NAN } else { score(&pred, &data.test)? };
            best = Some((val, epoch, test, score(&pred, &data.train)?));
        }
    }
    let (val_metric, best_epoch, test_metric, train_metric) = best.expect("at least one epoch");
    let (_, gate_means) = infer(&model, data)?;
    Ok(RunResult {
        seed: cfg.seed,
        test_metric,
        val_metric,
        train_metric,
        best_epoch,
        learned_temperatures: model.temperatures().into_iter().flatten().collect(),
        gate_means,
        losses,
    })
}

/// Random problem for gradient checks: `n` nodes, each undirected pair
/// linked with probability `p`, Gaussian features, uniform labels, every
/// node in the training split.
pub fn random_dataset(n: usize, in_dim: usize, classes: usize, p: f64, seed: u64) -> Result<LabeledDataset> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = stream_rng(seed, 0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges, true)?;
    let values = (0..n * in_dim).map(|_| rng.sample(StandardNormal)).collect();
    let features = FeatureMatrix::new(n, in_dim, values)?;
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    LabeledDataset::new(graph, features, labels, classes, &vec![Split::Train; n])
}

/// Compares the analytic gradient of the training objective (cross-entropy
/// on the training rows plus the gate regularizer) with central
/// differences, over every parameter of `model`. Dropout is off.
pub fn model_grad_check(model: &Model, data: &Prepared, lambda_gate: f64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let params: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    grad_check(&params, opts, |tape, vars| {
        let x = tape.constant(data.x.clone());
        let out = model.forward_vars::<rand_chacha::ChaCha8Rng>(tape, &data.ctx, x, vars, None)?;
        let mut loss = tape.cross_entropy(out.logits, data.labels.clone(), data.train.clone())?;
        if let Some(reg) = gate_regularizer(tape, &out.gates(), lambda_gate) {
            loss = tape.add(loss, reg)?;
        }
        Ok(loss)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_cases() {
        let uniform = Tensor::zeros(3, 7);
        let v = cross_entropy(&uniform, &[0, 3, 6], &[0, 1, 2]).unwrap();
        assert!((v - 7f64.ln()).abs() < 1e-12);
        let mut sharp = Tensor::zeros(1, 3);
        sharp.data_mut()[1] = 40.0;
        assert!(cross_entropy(&sharp, &[1], &[0]).unwrap() < 1e-6);
        assert!(matches!(cross_entropy(&sharp, &[1], &[]), Err(Error::EmptyMask)));
    }

    #[test]
    fn regularizer_values() {
        assert_eq!(gate_regularizer_value(&[0.5, 0.5], 0.0), 0.0);
        assert!((gate_regularizer_value(&[0.5, 0.5], 1e-5) - 1e-5).abs() < 1e-20);
        let mut tape = Tape::new();
        assert!(gate_regularizer(&mut tape, &[], 1.0).is_none());
        let g = tape.constant(Tensor::full(4, 2, 0.5));
        let r = gate_regularizer(&mut tape, &[g, g], 1e-5).unwrap();
        assert!((tape.value(r).item() - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn adam_first_steps() {
        let mut p = Tensor::new(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros(1, 3)], &mut st, 0.1, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);

        let mut q = Tensor::new(1, 2, vec![0.0, 0.0]).unwrap();
        let mut st = AdamState::new(&[&q]);
        let g = Tensor::new(1, 2, vec![3.0, -0.2]).unwrap();
        adam_step(&mut [&mut q], &[g], &mut st, 0.01, 0.0).unwrap();
        assert!((q.data()[0] + 0.01).abs() < 1e-9);
        assert!((q.data()[1] - 0.01).abs() < 1e-9);

        let bad = Tensor::zeros(2, 2);
        assert!(adam_step(&mut [&mut q], &[bad], &mut st, 0.01, 0.0).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = Tensor::scalar(0.0);
        let mut st = AdamState::new(&[&x]);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * (x.item() - 3.0));
            adam_step(&mut [&mut x], &[g], &mut st, 0.1, 0.0).unwrap();
        }
        assert!((x.item() - 3.0).abs() < 1e-3, "x = {}", x.item());
    }

    #[test]
    fn metrics_agree() {
        let labels = [0, 1, 2, 1, 0, 2];
        let rows = [0, 1, 2, 3, 4, 5];
        assert_eq!(accuracy(&labels, &labels, &rows).unwrap(), 1.0);
        assert_eq!(micro_f1(&labels, &labels, &rows, 3).unwrap(), 1.0);
        let wrong = [1, 2, 0, 0, 1, 0];
        assert_eq!(accuracy(&wrong, &labels, &rows).unwrap(), 0.0);
        let mixed = [0, 2, 2, 1, 1, 0];
        let a = accuracy(&mixed, &labels, &rows).unwrap();
        assert!((a - micro_f1(&mixed, &labels, &rows, 3).unwrap()).abs() < 1e-15);
        assert!(accuracy(&mixed, &labels, &[]).is_err());
    }
}
