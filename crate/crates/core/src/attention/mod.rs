//! The eleven attention variants: GCN, GAT and GATv2 backbones with optional
//! learnable temperature and post or gate-first feature gating.

mod layer;
mod logits;
mod model;
mod spec;

pub use layer::{
    layer_forward, temperature_from_theta, theta_for_temperature, AttnParams, Dropout, GraphContext, LayerOutput,
    LayerParams, LayerVars,
};
pub use logits::{
    embed_l1_as_gatv2, gat_logit, gate_values, gatv2_logit, l1_embedding_max_error, leaky_relu, weighted_l1_logit,
};
pub use model::{Model, ModelOutput};
pub use spec::{parameter_count, AttentionSpec, Backbone, GateMode, LayerShape, Method, TemperatureMode};

/// Floor added to `softplus(theta)` so the temperature stays positive.
pub const TEMPERATURE_EPS: f64 = 1e-3;
