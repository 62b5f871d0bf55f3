//! Network topology and the quantized model that the executor runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::kernels::{same_out_len, BnFold, FixedConvParams};
use crate::tensors::{Bitwidth, PackedBinaryWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Fixed-point convolution followed by batch-norm sign binarization.
    FixedConv,
    /// xor/popcount convolution followed by threshold activation.
    BinaryConv,
    /// Fixed-point classifier convolution on a ±1 map; feeds the pooling.
    FinalConv,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::FixedConv => 0,
            LayerKind::BinaryConv => 1,
            LayerKind::FinalConv => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(LayerKind::FixedConv),
            1 => Some(LayerKind::BinaryConv),
            2 => Some(LayerKind::FinalConv),
            _ => None,
        }
    }
}

/// Shape descriptor of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub ky: usize,
    pub kx: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.ky * self.kx * self.in_channels * self.out_channels
    }

    /// Whether the layer ends in a batch-norm binarization.
    pub fn binarizes(&self) -> bool {
        self.kind != LayerKind::FinalConv
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub layers: Vec<LayerShape>,
}

/// Published layer names, first to last.
pub const REFERENCE_LAYER_NAMES: [&str; 7] = [
    "First Layer",
    "1. Bin Layer",
    "2. Bin Layer",
    "3. Bin Layer",
    "4. Bin Layer",
    "5. Bin Layer",
    "Last Layer",
];

impl NetworkSpec {
    /// The 7-layer sound event detection network on a 64x400 Mel patch.
    pub fn reference() -> Self {
        let l = |kind, k, cin, cout, stride| LayerShape {
            kind,
            ky: k,
            kx: k,
            in_channels: cin,
            out_channels: cout,
            stride,
        };
        use LayerKind::*;
        NetworkSpec {
            input_height: 64,
            input_width: 400,
            input_channels: 1,
            classes: 28,
            layers: vec![
                l(FixedConv, 3, 1, 32, 1),
                l(BinaryConv, 3, 32, 64, 2),
                l(BinaryConv, 3, 64, 128, 1),
                l(BinaryConv, 3, 128, 128, 2),
                l(BinaryConv, 3, 128, 128, 1),
                l(BinaryConv, 1, 128, 128, 1),
                l(FinalConv, 1, 128, 28, 1),
            ],
        }
    }

    pub fn layer_name(&self, i: usize) -> String {
        if self.layers.len() == REFERENCE_LAYER_NAMES.len() {
            REFERENCE_LAYER_NAMES[i].to_string()
        } else {
            format!("layer {i} ({:?})", self.layers[i].kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |layer: String, detail: String| Err(Error::ShapeMismatch { layer, detail });
        let n = self.layers.len();
        if n < 2 {
            return err("network".into(), "needs at least a first and a final layer".into());
        }
        let mut channels = self.input_channels;
        for (i, l) in self.layers.iter().enumerate() {
            let name = self.layer_name(i);
            let want_kind = if i == 0 {
                LayerKind::FixedConv
            } else if i == n - 1 {
                LayerKind::FinalConv
            } else {
                LayerKind::BinaryConv
            };
            if l.kind != want_kind {
                return err(name, format!("kind {:?}, expected {:?}", l.kind, want_kind));
            }
            if l.in_channels != channels {
                return err(
                    name,
                    format!("{} input channels, previous layer gives {}", l.in_channels, channels),
                );
            }
            if l.ky % 2 == 0 || l.kx % 2 == 0 || l.ky == 0 {
                return err(name, format!("kernel {}x{} must be odd", l.ky, l.kx));
            }
            if !(l.stride == 1 || l.stride == 2) {
                return err(name, format!("stride {} not in {{1, 2}}", l.stride));
            }
            if l.out_channels == 0 {
                return err(name, "zero output channels".into());
            }
            channels = l.out_channels;
        }
        if channels != self.classes {
            return err(
                "Last Layer".into(),
                format!("{channels} outputs for {} classes", self.classes),
            );
        }
        Ok(())
    }

    /// `(height, width, channels)` of the input to each layer plus the final output.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut out = vec![(self.input_height, self.input_width, self.input_channels)];
        let (mut h, mut w) = (self.input_height, self.input_width);
        for l in &self.layers {
            h = same_out_len(h, l.stride);
            w = same_out_len(w, l.stride);
            out.push((h, w, l.out_channels));
        }
        out
    }

    /// Input-column extent one output column depends on, per side.
    pub fn receptive_radius(&self) -> usize {
        let mut jump = 1;
        let mut radius = 0;
        for l in &self.layers {
            radius += (l.kx - 1) / 2 * jump;
            jump *= l.stride;
        }
        radius
    }

    /// Total overlap two neighbouring tiles need: `sum (k - 1) * jump`.
    pub fn required_halo(&self) -> usize {
        let mut jump = 1;
        let mut halo = 0;
        for l in &self.layers {
            halo += (l.kx - 1) * jump;
            jump *= l.stride;
        }
        halo
    }

    /// Product of all strides.
    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }
}

/// Parameters attached to one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerParams {
    Fixed { conv: FixedConvParams, fold: BnFold },
    Binary { weights: PackedBinaryWeights, fold: BnFold },
    Final { conv: FixedConvParams },
}

impl LayerParams {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerParams::Fixed { .. } => LayerKind::FixedConv,
            LayerParams::Binary { .. } => LayerKind::BinaryConv,
            LayerParams::Final { .. } => LayerKind::FinalConv,
        }
    }

    pub fn fold(&self) -> Option<&BnFold> {
        match self {
            LayerParams::Fixed { fold, .. } | LayerParams::Binary { fold, .. } => Some(fold),
            LayerParams::Final { .. } => None,
        }
    }
}

/// A quantized, ready-to-run network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub frontend: FrontendConfig,
    /// Q-format the first layer expects its input in.
    pub input_qformat: u8,
    pub layers: Vec<LayerParams>,
}

impl Model {
    /// Checks parameters against the topology and the 32-bit accumulator bound.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.layers.len() != self.spec.layers.len() {
            return Err(Error::ShapeMismatch {
                layer: "network".into(),
                detail: format!(
                    "{} parameter blocks for {} layers",
                    self.layers.len(),
                    self.spec.layers.len()
                ),
            });
        }
        for (i, (shape, params)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let name = self.spec.layer_name(i);
            let mismatch = |detail: String| {
                Err(Error::ShapeMismatch {
                    layer: name.clone(),
                    detail,
                })
            };
            if params.kind() != shape.kind {
                return mismatch(format!("parameters for {:?}", params.kind()));
            }
            if let Some(fold) = params.fold() {
                if fold.channels() != shape.out_channels {
                    return mismatch(format!("fold has {} channels", fold.channels()));
                }
            }
            match params {
                LayerParams::Fixed { conv, .. } | LayerParams::Final { conv } => {
                    conv.validate()?;
                    let dims = (conv.out_channels, conv.in_channels, conv.ky, conv.kx);
                    if dims != (shape.out_channels, shape.in_channels, shape.ky, shape.kx) {
                        return mismatch(format!("conv params {dims:?}"));
                    }
                    let max_in = if shape.kind == LayerKind::FixedConv {
                        1u64 << 15
                    } else {
                        1
                    };
                    conv.check_accumulator(max_in, &name)?;
                }
                LayerParams::Binary { weights, .. } => {
                    let (ky, kx) = weights.kernel();
                    let dims = (weights.out_channels(), weights.in_channels(), ky, kx);
                    if dims != (shape.out_channels, shape.in_channels, shape.ky, shape.kx) {
                        return mismatch(format!("binary weights {dims:?}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Real value of one unit of the final accumulator.
    pub fn score_scale(&self) -> f64 {
        match self.layers.last() {
            Some(LayerParams::Final { conv }) => (-(conv.weight_qformat as f64 - conv.output_shift as f64)).exp2(),
            _ => 1.0,
        }
    }

    /// Bitwidth of the feature map the first layer emits.
    pub fn first_output_bitwidth(&self) -> Bitwidth {
        match self.layers.first() {
            Some(LayerParams::Fixed { conv, .. }) => conv.output_bitwidth,
            _ => Bitwidth::B16,
        }
    }
}
