use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::spec::{AttentionSpec, Backbone, GateMode, LayerShape, TemperatureMode};
use super::TEMPERATURE_EPS;
use crate::autodiff::{Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Attention-scoring parameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttnParams {
    None,
    /// Target and source halves of the attention vector `a`, one column per
    /// head (`head_dim x heads`).
    Gat { a_dst: Tensor, a_src: Tensor },
    /// `e_ij = q^T LeakyReLU(W_dst h_i + W h_j)`: the pair projection
    /// `[W_dst || W]` acting on `[h_i || h_j]`, with the source half shared
    /// with the message projection. `q` is `head_dim x heads`.
    GatV2 { w_dst: Tensor, q: Tensor },
}

/// Trainable tensors of one layer. Projections act on the right,
/// `h W` with `h` of shape `n x d_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub attn: AttnParams,
    /// Temperature pre-parameter; `T = softplus(theta) + eps`.
    pub theta: Option<Tensor>,
    pub gate_weight: Option<Tensor>,
    pub gate_bias: Option<Tensor>,
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(rows, cols, data).expect("shape")
}

/// `theta` with `softplus(theta) + eps = t`.
pub fn theta_for_temperature(t: f64) -> f64 {
    let s = t - TEMPERATURE_EPS;
    // inverse softplus, stable for large s
    s + (-(-s).exp_m1()).ln()
}

pub fn temperature_from_theta(theta: f64) -> f64 {
    let sp = if theta > 30.0 {
        theta + (-theta).exp()
    } else {
        theta.exp().ln_1p()
    };
    sp + TEMPERATURE_EPS
}

impl LayerParams {
    /// Xavier-uniform projections, attention vectors and gate weights; zero
    /// output bias; gate bias `spec.gate_bias_init`; `T = spec.init_temp`.
    pub fn init<R: Rng + ?Sized>(spec: &AttentionSpec, shape: &LayerShape, rng: &mut R) -> Self {
        let (d_in, p) = (shape.in_dim, shape.projected_dim());
        let weight = xavier(d_in, p, d_in, p, rng);
        let attn = match spec.backbone {
            Backbone::Gcn => AttnParams::None,
            Backbone::Gat => AttnParams::Gat {
                a_dst: xavier(shape.head_dim, shape.heads, shape.heads, shape.head_dim, rng),
                a_src: xavier(shape.head_dim, shape.heads, shape.heads, shape.head_dim, rng),
            },
            Backbone::GatV2 => AttnParams::GatV2 {
                w_dst: xavier(d_in, p, d_in, p, rng),
                q: xavier(shape.head_dim, shape.heads, shape.heads, shape.head_dim, rng),
            },
        };
        let theta = (spec.temperature == TemperatureMode::Learnable)
            .then(|| Tensor::scalar(theta_for_temperature(spec.init_temp)));
        let (gate_weight, gate_bias) = match spec.gate_dim(shape) {
            Some(g) => (
                Some(xavier(d_in, g, d_in, g, rng)),
                Some(Tensor::full(1, g, spec.gate_bias_init)),
            ),
            None => (None, None),
        };
        Self {
            weight,
            bias: Tensor::zeros(1, shape.out_dim()),
            attn,
            theta,
            gate_weight,
            gate_bias,
        }
    }

    /// Every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.weight, &self.bias];
        match &self.attn {
            AttnParams::None => {}
            AttnParams::Gat { a_dst, a_src } => out.extend([a_dst, a_src]),
            AttnParams::GatV2 { w_dst, q } => out.extend([w_dst, q]),
        }
        out.extend(self.theta.iter());
        out.extend(self.gate_weight.iter());
        out.extend(self.gate_bias.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.weight, &mut self.bias];
        match &mut self.attn {
            AttnParams::None => {}
            AttnParams::Gat { a_dst, a_src } => out.extend([a_dst, a_src]),
            AttnParams::GatV2 { w_dst, q } => out.extend([w_dst, q]),
        }
        out.extend(self.theta.iter_mut());
        out.extend(self.gate_weight.iter_mut());
        out.extend(self.gate_bias.iter_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn temperature(&self) -> Option<f64> {
        self.theta.as_ref().map(|t| temperature_from_theta(t.item()))
    }

    /// Registers every tensor on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> LayerVars {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        self.bind(&mut vars.into_iter())
    }

    /// Takes this layer's handles from `vars`, which must yield them in
    /// [`LayerParams::tensors`] order. Panics if it runs out.
    pub fn bind(&self, vars: &mut impl Iterator<Item = Var>) -> LayerVars {
        let weight = vars.next().unwrap();
        let bias = vars.next().unwrap();
        let attn = match self.attn {
            AttnParams::None => None,
            _ => Some((vars.next().unwrap(), vars.next().unwrap())),
        };
        let theta = self.theta.as_ref().map(|_| vars.next().unwrap());
        let gate = self
            .gate_weight
            .as_ref()
            .map(|_| (vars.next().unwrap(), vars.next().unwrap()));
        LayerVars {
            weight,
            bias,
            attn,
            theta,
            gate,
        }
    }
}

/// Tape handles for one layer's parameters, in [`LayerParams::tensors`] order.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    pub attn: Option<(Var, Var)>,
    pub theta: Option<Var>,
    pub gate: Option<(Var, Var)>,
}

impl LayerVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.weight, self.bias];
        if let Some((a, b)) = self.attn {
            out.extend([a, b]);
        }
        out.extend(self.theta);
        if let Some((w, b)) = self.gate {
            out.extend([w, b]);
        }
        out
    }
}

/// Edge-level index structures derived once per graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub num_nodes: usize,
    pub segments: Arc<Segments>,
    pub dst: Arc<Vec<usize>>,
    pub src: Arc<Vec<usize>>,
    /// Symmetric normalization `1 / sqrt(deg_i deg_j)` per edge.
    pub gcn_norm: Tensor,
    empty: Option<usize>,
}

impl GraphContext {
    pub fn new(graph: &Graph) -> Result<Self> {
        let dst = graph.edge_targets();
        let segments = Segments::from_ids(&dst, graph.num_nodes())?;
        let src = graph.col_indices().to_vec();
        let deg: Vec<f64> = (0..graph.num_nodes()).map(|i| graph.degree(i) as f64).collect();
        let norm = dst
            .iter()
            .zip(&src)
            .map(|(&i, &j)| 1.0 / (deg[i] * deg[j]).sqrt())
            .collect();
        let empty = (0..graph.num_nodes()).find(|&i| graph.degree(i) == 0);
        Ok(Self {
            num_nodes: graph.num_nodes(),
            segments: Arc::new(segments),
            dst: Arc::new(dst),
            src: Arc::new(src),
            gcn_norm: Tensor::column(norm),
            empty,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// Dropout state for one forward pass.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, d: &mut Dropout<'_, R>) -> Tensor {
    let keep = 1.0 - d.rate;
    let data = (0..rows * cols)
        .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::new(rows, cols, data).expect("shape")
}

fn apply_dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, dropout: &mut Option<Dropout<'_, R>>) -> Result<Var> {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let [r, c] = tape.value(x).shape();
            let mask = tape.constant(dropout_mask(r, c, d));
            tape.mul(x, mask)
        }
        _ => Ok(x),
    }
}

/// Values produced by one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    pub out: Var,
    /// Attention coefficients, `E x heads`.
    pub alpha: Option<Var>,
    pub gate: Option<Var>,
    pub temperature: Option<Var>,
}

/// One layer of the configured variant.
///
/// Temperature is a single scalar shared by all heads. Post-gating
/// multiplies the layer output (after head concatenation or averaging, and
/// after the bias). Gate-first multiplies the projected features of all
/// heads before scoring and aggregation; for GATv2 it also gates the
/// target-side projection so both halves of the pair use gated features.
pub fn layer_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    spec: &AttentionSpec,
    shape: &LayerShape,
    vars: &LayerVars,
    ctx: &GraphContext,
    h: Var,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<LayerOutput> {
    if let Some(i) = ctx.empty {
        return Err(Error::EmptyNeighborhood(i));
    }
    let [n, d_in] = tape.value(h).shape();
    if n != ctx.num_nodes || d_in != shape.in_dim {
        return Err(Error::ShapeMismatch {
            op: "layer_forward",
            detail: format!("input {n}x{d_in}, expected {}x{}", ctx.num_nodes, shape.in_dim),
        });
    }

    let h = apply_dropout(tape, h, &mut dropout)?;
    let projected = tape.matmul(h, vars.weight)?;

    if spec.backbone == Backbone::Gcn {
        let msgs = tape.gather(projected, ctx.src.clone())?;
        let norm = tape.constant(ctx.gcn_norm.clone());
        let weighted = tape.scale_rows(msgs, norm)?;
        let agg = tape.segment_sum(weighted, ctx.segments.clone())?;
        let out = tape.add_row(agg, vars.bias)?;
        return Ok(LayerOutput {
            out,
            alpha: None,
            gate: None,
            temperature: None,
        });
    }

    let gate = match vars.gate {
        Some((wg, bg)) => {
            let z = tape.matmul(h, wg)?;
            let z = tape.add_row(z, bg)?;
            Some(tape.sigmoid(z))
        }
        None => None,
    };
    let gate_first = spec.gate == GateMode::GateFirst;
    let features = match (gate_first, gate) {
        (true, Some(g)) => tape.mul(projected, g)?,
        _ => projected,
    };

    let (attn_a, attn_b) = vars.attn.expect("attention backbone has attention parameters");
    let target_side = match spec.backbone {
        Backbone::GatV2 => {
            let t = tape.matmul(h, attn_a)?;
            match (gate_first, gate) {
                (true, Some(g)) => Some(tape.mul(t, g)?),
                _ => Some(t),
            }
        }
        _ => None,
    };

    let f = shape.head_dim;
    let mut head_logits = Vec::with_capacity(shape.heads);
    for k in 0..shape.heads {
        let fk = tape.slice(features, k * f, (k + 1) * f)?;
        let logit = match spec.backbone {
            Backbone::Gat => {
                let a_dst = tape.slice(attn_a, k, k + 1)?;
                let a_src = tape.slice(attn_b, k, k + 1)?;
                let s_dst = tape.matmul(fk, a_dst)?;
                let s_src = tape.matmul(fk, a_src)?;
                let e_dst = tape.gather(s_dst, ctx.dst.clone())?;
                let e_src = tape.gather(s_src, ctx.src.clone())?;
                let s = tape.add(e_dst, e_src)?;
                tape.leaky_relu(s, spec.leaky_slope)
            }
            Backbone::GatV2 => {
                let tk = tape.slice(target_side.unwrap(), k * f, (k + 1) * f)?;
                let z_dst = tape.gather(tk, ctx.dst.clone())?;
                let z_src = tape.gather(fk, ctx.src.clone())?;
                let z = tape.add(z_dst, z_src)?;
                let z = tape.leaky_relu(z, spec.leaky_slope);
                let q = tape.slice(attn_b, k, k + 1)?;
                tape.matmul(z, q)?
            }
            Backbone::Gcn => unreachable!(),
        };
        head_logits.push(logit);
    }
    let logits = if head_logits.len() == 1 {
        head_logits[0]
    } else {
        tape.concat(&head_logits)?
    };

    let temperature = match vars.theta {
        Some(theta) => {
            let sp = tape.softplus(theta);
            tape.add_scalar(sp, TEMPERATURE_EPS)
        }
        None => tape.constant(Tensor::scalar(1.0)),
    };
    let alpha = tape.segment_softmax(logits, ctx.segments.clone(), temperature)?;
    let alpha_used = apply_dropout(tape, alpha, &mut dropout)?;

    let msgs = tape.gather(features, ctx.src.clone())?;
    let weighted = tape.scale_rows(msgs, alpha_used)?;
    let agg = tape.segment_sum(weighted, ctx.segments.clone())?;

    let combined = if shape.concat || shape.heads == 1 {
        agg
    } else {
        let parts: Vec<Var> = (0..shape.heads)
            .map(|k| tape.slice(agg, k * f, (k + 1) * f))
            .collect::<Result<_>>()?;
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p)?;
        }
        tape.scale(acc, 1.0 / shape.heads as f64)
    };
    let mut out = tape.add_row(combined, vars.bias)?;
    if spec.gate == GateMode::Post {
        out = tape.mul(out, gate.expect("post-gate has a gate"))?;
    }

    Ok(LayerOutput {
        out,
        alpha: Some(alpha),
        gate,
        temperature: vars.theta.map(|_| temperature),
    })
}
