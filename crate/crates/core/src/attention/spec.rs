use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    Gcn,
    Gat,
    GatV2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemperatureMode {
    Off,
    Learnable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateMode {
    Off,
    /// Gate multiplies the aggregated output.
    Post,
    /// Gate multiplies the projected features, which then feed both the
    /// logits and the messages.
    GateFirst,
}

/// The eleven compared methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Gcn,
    Gat,
    GatV2,
    Gated,
    TempOnly,
    TempGated,
    GatedTemp,
    GatedV2,
    TempOnlyV2,
    TempGatedV2,
    GatedTempV2,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Gcn,
        Method::Gat,
        Method::GatV2,
        Method::Gated,
        Method::TempOnly,
        Method::TempGated,
        Method::GatedTemp,
        Method::GatedV2,
        Method::TempOnlyV2,
        Method::TempGatedV2,
        Method::GatedTempV2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gcn => "GCN",
            Method::Gat => "GAT",
            Method::GatV2 => "GATv2",
            Method::Gated => "Gated",
            Method::TempOnly => "Temp_only",
            Method::TempGated => "Temp_gated",
            Method::GatedTemp => "Gated_temp",
            Method::GatedV2 => "Gated_v2",
            Method::TempOnlyV2 => "Temp_only_v2",
            Method::TempGatedV2 => "Temp_gated_v2",
            Method::GatedTempV2 => "Gated_temp_v2",
        }
    }

    pub fn parts(self) -> (Backbone, TemperatureMode, GateMode) {
        use Backbone::*;
        use GateMode as G;
        use TemperatureMode as T;
        match self {
            Method::Gcn => (Gcn, T::Off, G::Off),
            Method::Gat => (Gat, T::Off, G::Off),
            Method::GatV2 => (GatV2, T::Off, G::Off),
            Method::Gated => (Gat, T::Off, G::Post),
            Method::TempOnly => (Gat, T::Learnable, G::Off),
            Method::TempGated => (Gat, T::Learnable, G::Post),
            Method::GatedTemp => (Gat, T::Learnable, G::GateFirst),
            Method::GatedV2 => (GatV2, T::Off, G::Post),
            Method::TempOnlyV2 => (GatV2, T::Learnable, G::Off),
            Method::TempGatedV2 => (GatV2, T::Learnable, G::Post),
            Method::GatedTempV2 => (GatV2, T::Learnable, G::GateFirst),
        }
    }

    pub fn from_parts(backbone: Backbone, temperature: TemperatureMode, gate: GateMode) -> Option<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.parts() == (backbone, temperature, gate))
    }

    pub fn has_temperature(self) -> bool {
        self.parts().1 == TemperatureMode::Learnable
    }

    pub fn has_gate(self) -> bool {
        self.parts().2 != GateMode::Off
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Architecture of a multi-layer model for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub backbone: Backbone,
    pub temperature: TemperatureMode,
    pub gate: GateMode,
    /// Heads on hidden layers (concatenated).
    pub heads: usize,
    /// Heads on the output layer (averaged).
    pub output_heads: usize,
    pub in_dim: usize,
    /// Per-head width on hidden attention layers; full width for GCN.
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub layers: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub init_temp: f64,
    pub gate_bias_init: f64,
}

/// Shape of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Hidden layers concatenate heads; the output layer averages them.
    pub concat: bool,
}

impl LayerShape {
    pub fn projected_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.heads * self.head_dim
        } else {
            self.head_dim
        }
    }
}

impl AttentionSpec {
    pub fn for_method(method: Method, in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        let (backbone, temperature, gate) = method.parts();
        let heads = if backbone == Backbone::Gcn { 1 } else { 8 };
        Self {
            backbone,
            temperature,
            gate,
            heads,
            output_heads: 1,
            in_dim,
            hidden_dim,
            out_dim,
            layers: 2,
            leaky_slope: 0.2,
            dropout: 0.0,
            init_temp: 1.0,
            gate_bias_init: 0.0,
        }
    }

    pub fn with_heads(mut self, heads: usize, output_heads: usize) -> Self {
        self.heads = heads;
        self.output_heads = output_heads;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn method(&self) -> Result<Method> {
        Method::from_parts(self.backbone, self.temperature, self.gate).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "({:?}, {:?}, {:?}) is not one of the eleven methods",
                self.backbone, self.temperature, self.gate
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.method()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.heads == 0 || self.output_heads == 0 {
            return bad("heads must be >= 1");
        }
        if self.backbone == Backbone::Gcn && (self.heads != 1 || self.output_heads != 1) {
            return bad("GCN has no attention heads");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.init_temp > super::TEMPERATURE_EPS) {
            return bad("init_temp must exceed the softplus floor");
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.layers);
        let mut in_dim = self.in_dim;
        for l in 0..self.layers {
            let last = l + 1 == self.layers;
            let shape = if last {
                LayerShape {
                    in_dim,
                    heads: self.output_heads,
                    head_dim: self.out_dim,
                    concat: false,
                }
            } else {
                LayerShape {
                    in_dim,
                    heads: self.heads,
                    head_dim: self.hidden_dim,
                    concat: true,
                }
            };
            in_dim = shape.out_dim();
            shapes.push(shape);
        }
        shapes
    }

    /// Width of the gate at each layer: the projected width for gate-first,
    /// the layer output width for post-gate.
    pub fn gate_dim(&self, shape: &LayerShape) -> Option<usize> {
        match self.gate {
            GateMode::Off => None,
            GateMode::Post => Some(shape.out_dim()),
            GateMode::GateFirst => Some(shape.projected_dim()),
        }
    }
}

/// Number of trainable scalars for `spec`.
///
/// Per layer: projection `d_in x (heads * head_dim)` and output bias; GAT
/// adds two attention vectors per head, GATv2 a target-side projection plus
/// one scoring vector per head; temperature adds one scalar; gating adds
/// `gate_dim * d_in + gate_dim`.
pub fn parameter_count(spec: &AttentionSpec) -> usize {
    spec.layer_shapes()
        .iter()
        .map(|s| {
            let proj = s.in_dim * s.projected_dim() + s.out_dim();
            let attn = match spec.backbone {
                Backbone::Gcn => 0,
                Backbone::Gat => 2 * s.projected_dim(),
                Backbone::GatV2 => s.in_dim * s.projected_dim() + s.projected_dim(),
            };
            let temp = usize::from(spec.temperature == TemperatureMode::Learnable);
            let gate = spec.gate_dim(s).map_or(0, |g| g * s.in_dim + g);
            proj + attn + temp + gate
        })
        .sum()
}
