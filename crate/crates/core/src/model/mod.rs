//! Float parameters, quantization into a runnable [`Model`](crate::network::Model),
//! and the on-disk model and feature formats.

mod format;
mod quantize;
mod random;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerKind, NetworkSpec};

pub use format::{load_features, load_model, save_features, save_model, FEATURE_MAGIC, FORMAT_VERSION, MODEL_MAGIC};
pub use quantize::{
    binarize_weights, choose_qformat, fold_batchnorm, quantize, QuantizeOptions, FOLD_EXHAUSTIVE_LIMIT,
};
pub use random::{gen_random_float_model, gen_random_model};

/// Per-channel inference batch norm: `gamma * (x - mean) / std + beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BatchNorm {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// The same normalization with `mean` and `std` expressed in units of
    /// `2^-f`, for inputs stored as Q`f` integers.
    pub fn scaled(&self, f: u8) -> BatchNorm {
        let s = (f as f64).exp2();
        BatchNorm {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            mean: self.mean.iter().map(|m| m * s).collect(),
            std: self.std.iter().map(|v| v * s).collect(),
        }
    }
}

/// Float parameters of one layer. Weights are `[out][ky][kx][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FloatLayer {
    Fixed {
        weights: Vec<f64>,
        bias: Vec<f64>,
        bn: BatchNorm,
    },
    Binary {
        weights: Vec<f64>,
        bn: BatchNorm,
    },
    Final {
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

impl FloatLayer {
    pub fn kind(&self) -> LayerKind {
        match self {
            FloatLayer::Fixed { .. } => LayerKind::FixedConv,
            FloatLayer::Binary { .. } => LayerKind::BinaryConv,
            FloatLayer::Final { .. } => LayerKind::FinalConv,
        }
    }
}

/// Trained (or synthetic) parameters before folding and quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatModel {
    pub spec: NetworkSpec,
    pub layers: Vec<FloatLayer>,
}

impl FloatModel {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.layers.len() != self.spec.layers.len() {
            return Err(Error::ShapeMismatch {
                layer: "network".into(),
                detail: format!(
                    "{} layers of parameters for {} layers",
                    self.layers.len(),
                    self.spec.layers.len()
                ),
            });
        }
        for (i, (shape, layer)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let name = self.spec.layer_name(i);
            let bad = |detail: String| {
                Err(Error::ShapeMismatch {
                    layer: name.clone(),
                    detail,
                })
            };
            if layer.kind() != shape.kind {
                return bad(format!("parameters for {:?}", layer.kind()));
            }
            let (weights, bias, bn) = match layer {
                FloatLayer::Fixed { weights, bias, bn } => (weights, Some(bias), Some(bn)),
                FloatLayer::Binary { weights, bn } => (weights, None, Some(bn)),
                FloatLayer::Final { weights, bias } => (weights, Some(bias), None),
            };
            if weights.len() != shape.weight_count() {
                return bad(format!("{} weights, expected {}", weights.len(), shape.weight_count()));
            }
            if bias.is_some_and(|b| b.len() != shape.out_channels) {
                return bad("bias length".into());
            }
            if let Some(bn) = bn {
                let n = shape.out_channels;
                if [bn.gamma.len(), bn.beta.len(), bn.mean.len(), bn.std.len()] != [n; 4] {
                    return bad("batch-norm length".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("float model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FloatModel = serde_json::from_str(s).map_err(|e| Error::Malformed(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}
