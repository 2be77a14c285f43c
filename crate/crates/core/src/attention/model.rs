use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{layer_forward, Dropout, GraphContext, LayerOutput, LayerParams, LayerVars};
use super::spec::{AttentionSpec, Backbone};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A stack of layers sharing one [`AttentionSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: AttentionSpec,
    pub layers: Vec<LayerParams>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub logits: Var,
    pub layer_vars: Vec<LayerVars>,
    pub layers: Vec<LayerOutput>,
}

impl ModelOutput {
    /// Gate activations of every gated layer, in layer order.
    pub fn gates(&self) -> Vec<Var> {
        self.layers.iter().filter_map(|l| l.gate).collect()
    }

    /// Parameter handles in [`Model::tensors`] order.
    pub fn params(&self) -> Vec<Var> {
        self.layer_vars.iter().flat_map(|v| v.all()).collect()
    }
}

impl Model {
    pub fn new<R: Rng + ?Sized>(spec: AttentionSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .iter()
            .map(|s| LayerParams::init(&spec, s, rng))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.num_parameters()).sum()
    }

    /// Learned temperature per layer (`None` for layers without one).
    pub fn temperatures(&self) -> Vec<Option<f64>> {
        self.layers.iter().map(|l| l.temperature()).collect()
    }

    /// Registers the parameters on `tape` and runs every layer. Hidden layers
    /// use ELU (ReLU for GCN); the last layer returns raw class scores.
    /// Dropout is active iff `rng` is given and the spec rate is positive.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<ModelOutput> {
        let layer_vars: Vec<LayerVars> = self.layers.iter().map(|l| l.register(tape)).collect();
        self.forward_with(tape, ctx, x, layer_vars, rng)
    }

    /// Same as [`Model::forward`] but uses existing parameter handles, given
    /// flat in [`Model::tensors`] order.
    pub fn forward_vars<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        x: Var,
        params: &[Var],
        rng: Option<&mut R>,
    ) -> Result<ModelOutput> {
        let expected = self.tensors().len();
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "forward_vars",
                detail: format!("expected {expected} parameter handles, got {}", params.len()),
            });
        }
        let mut it = params.iter().copied();
        let layer_vars = self.layers.iter().map(|l| l.bind(&mut it)).collect();
        self.forward_with(tape, ctx, x, layer_vars, rng)
    }

    fn forward_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        x: Var,
        layer_vars: Vec<LayerVars>,
        mut rng: Option<&mut R>,
    ) -> Result<ModelOutput> {
        let shapes = self.spec.layer_shapes();
        let mut h = x;
        let mut outs = Vec::with_capacity(shapes.len());
        for (l, (shape, vars)) in shapes.iter().zip(&layer_vars).enumerate() {
            let dropout = rng.as_deref_mut().map(|rng| Dropout {
                rate: self.spec.dropout,
                rng,
            });
            let out = layer_forward(tape, &self.spec, shape, vars, ctx, h, dropout)?;
            h = if l + 1 == shapes.len() {
                out.out
            } else if self.spec.backbone == Backbone::Gcn {
                tape.relu(out.out)
            } else {
                tape.elu(out.out)
            };
            outs.push(out);
        }
        Ok(ModelOutput {
            logits: h,
            layer_vars,
            layers: outs,
        })
    }
}
