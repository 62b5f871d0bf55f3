//! MAC counts and memory footprint of a [`NetworkSpec`].
//!
//! MACs are counted under two padding conventions. The "same" count is what
//! the executor performs; the "valid" count (each layer shrinking its input by
//! `k - 1` before striding) is the convention the published per-layer figures
//! follow. Footprints are in bytes; `kB` means 1000 bytes throughout.

use serde::{Deserialize, Serialize};

use crate::executor::{column_ranges, TilePlan};
use crate::network::{LayerKind, LayerShape, NetworkSpec};
use crate::tensors::words_for;

/// Published per-layer MACs of the reference network, first to last.
pub const PUBLISHED_LAYER_MACS: [u64; 7] = [
    7_000_000,
    109_000_000,
    405_000_000,
    186_000_000,
    154_000_000,
    17_000_000,
    6_000_000,
];
pub const PUBLISHED_TOTAL_MACS: u64 = 884_000_000;
pub const PUBLISHED_WEIGHT_KB: f64 = 58.0;
pub const PUBLISHED_FIXED16_WEIGHT_KB: f64 = 815.0;
pub const PUBLISHED_TOTAL_KB: f64 = 262.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

fn out_len(len: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => len.div_ceil(stride),
        Padding::Valid => (len + 1).saturating_sub(k).div_ceil(stride),
    }
}

fn layer_macs(l: &LayerShape, h: usize, w: usize) -> u64 {
    (h * w * l.out_channels * l.ky * l.kx * l.in_channels) as u64
}

/// MACs per layer under one padding convention.
pub fn macs_with(net: &NetworkSpec, padding: Padding) -> Vec<u64> {
    let (mut h, mut w) = (net.input_height, net.input_width);
    net.layers
        .iter()
        .map(|l| {
            h = out_len(h, l.ky, l.stride, padding);
            w = out_len(w, l.kx, l.stride, padding);
            layer_macs(l, h, w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacRow {
    pub layer: String,
    pub same: u64,
    pub valid: u64,
    pub published: Option<u64>,
    /// `(valid - published) / published`.
    pub delta_valid: Option<f64>,
    /// `(same - published) / published`.
    pub delta_same: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacReport {
    pub rows: Vec<MacRow>,
    pub total_same: u64,
    pub total_valid: u64,
    pub published_total: Option<u64>,
}

impl MacReport {
    pub fn delta_total_valid(&self) -> Option<f64> {
        self.published_total.map(|p| rel(self.total_valid, p))
    }

    pub fn delta_total_same(&self) -> Option<f64> {
        self.published_total.map(|p| rel(self.total_same, p))
    }
}

fn rel(a: u64, b: u64) -> f64 {
    (a as f64 - b as f64) / b as f64
}

/// Per-layer and total MACs, with published figures attached when `net` is
/// the reference topology.
pub fn count_macs(net: &NetworkSpec) -> MacReport {
    let same = macs_with(net, Padding::Same);
    let valid = macs_with(net, Padding::Valid);
    let reference = *net == NetworkSpec::reference();
    let rows = (0..net.layers.len())
        .map(|i| {
            let published = reference.then(|| PUBLISHED_LAYER_MACS[i]);
            MacRow {
                layer: net.layer_name(i),
                same: same[i],
                valid: valid[i],
                published,
                delta_valid: published.map(|p| rel(valid[i], p)),
                delta_same: published.map(|p| rel(same[i], p)),
            }
        })
        .collect();
    MacReport {
        rows,
        total_same: same.iter().sum(),
        total_valid: valid.iter().sum(),
        published_total: reference.then_some(PUBLISHED_TOTAL_MACS),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub l1_bytes: usize,
    pub l2_bytes: usize,
    pub double_buffer_weights: bool,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        MemoryBudget {
            l1_bytes: 65_536,
            l2_bytes: 524_288,
            double_buffer_weights: true,
        }
    }
}

/// Storage precision of the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// 1-bit hidden layers, 16-bit first and last layers.
    #[default]
    Binary,
    /// Every layer in 16-bit fixed point.
    Fixed16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFootprint {
    pub layer: String,
    pub weight_bytes: usize,
    /// Thresholds plus the polarity bit mask.
    pub fold_bytes: usize,
    pub bias_bytes: usize,
    /// Full-size output feature map.
    pub output_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub precision: Precision,
    pub layers: Vec<LayerFootprint>,
    /// Convolution weights only.
    pub weight_bytes: usize,
    pub fold_bytes: usize,
    pub bias_bytes: usize,
    /// Weights, folds and biases.
    pub parameter_bytes: usize,
    /// Raw 16-bit audio for one patch.
    pub audio_bytes: usize,
    /// 16-bit feature patch.
    pub feature_bytes: usize,
    /// Largest input + output map pair over the layers, full size, the
    /// feature patch counting as the first layer's input.
    pub activation_peak_bytes: usize,
    /// `parameter_bytes + audio_bytes + activation_peak_bytes`.
    pub total_bytes: usize,
    /// Largest per-tile working set: tile input and output maps plus the
    /// current layer's weights (and the next layer's under double buffering).
    pub tile_peak_bytes: usize,
    pub budget: MemoryBudget,
    pub fits_l2: bool,
    pub fits_l1: bool,
}

impl Footprint {
    pub fn fits(&self) -> bool {
        self.fits_l2
    }
}

fn weight_bytes(l: &LayerShape, precision: Precision) -> usize {
    let n = l.weight_count();
    match (l.kind, precision) {
        (LayerKind::BinaryConv, Precision::Binary) => n.div_ceil(8),
        _ => n * 2,
    }
}

/// Bytes of `h x cols x c` activations emitted by layer `l`.
fn map_bytes(l: &LayerShape, h: usize, cols: usize, precision: Precision) -> usize {
    let c = l.out_channels;
    match (l.kind, precision) {
        // pooling consumes the final map as it is produced
        (LayerKind::FinalConv, _) => c * 8,
        (_, Precision::Binary) => h * cols * words_for(c) * 4,
        (_, Precision::Fixed16) => h * cols * c * 2,
    }
}

/// Memory needed to run `net` with `plan`, checked against `budget`.
pub fn footprint(net: &NetworkSpec, budget: MemoryBudget, plan: &TilePlan, precision: Precision) -> Footprint {
    let shapes = net.shapes();
    let feature_bytes = net.input_height * net.input_width * net.input_channels * 2;
    let audio_bytes = if *net == NetworkSpec::reference() {
        let cfg = crate::frontend::FrontendConfig::default();
        cfg.patch_samples() * 2
    } else {
        0
    };

    let mut layers = Vec::with_capacity(net.layers.len());
    let mut prev_map = feature_bytes;
    let mut activation_peak = 0;
    for (i, l) in net.layers.iter().enumerate() {
        let (h, w, _) = shapes[i + 1];
        let out = map_bytes(l, h, w, precision);
        activation_peak = activation_peak.max(prev_map + out);
        prev_map = out;
        let fold_bytes = if l.binarizes() {
            l.out_channels * 4 + l.out_channels.div_ceil(8)
        } else {
            0
        };
        let bias_bytes = if l.kind == LayerKind::BinaryConv && precision == Precision::Binary {
            0
        } else {
            l.out_channels * 4
        };
        layers.push(LayerFootprint {
            layer: net.layer_name(i),
            weight_bytes: weight_bytes(l, precision),
            fold_bytes,
            bias_bytes,
            output_bytes: out,
        });
    }

    let tile_peak = plan
        .tiles
        .iter()
        .map(|t| {
            let ranges = column_ranges(net, t.output_cols.clone());
            let mut in_bytes = net.input_height * t.input_cols.len() * net.input_channels * 2;
            let mut peak = 0;
            for (i, l) in net.layers.iter().enumerate() {
                let out = map_bytes(l, shapes[i + 1].0, ranges[i + 1].len(), precision);
                let mut w = layers[i].weight_bytes + layers[i].fold_bytes + layers[i].bias_bytes;
                if budget.double_buffer_weights {
                    if let Some(next) = layers.get(i + 1) {
                        w += next.weight_bytes + next.fold_bytes + next.bias_bytes;
                    }
                }
                peak = peak.max(in_bytes + out + w);
                in_bytes = out;
            }
            peak
        })
        .max()
        .unwrap_or(0);

    let weight_bytes: usize = layers.iter().map(|l| l.weight_bytes).sum();
    let fold_bytes: usize = layers.iter().map(|l| l.fold_bytes).sum();
    let bias_bytes: usize = layers.iter().map(|l| l.bias_bytes).sum();
    let parameter_bytes = weight_bytes + fold_bytes + bias_bytes;
    let total_bytes = parameter_bytes + audio_bytes + activation_peak;
    Footprint {
        precision,
        layers,
        weight_bytes,
        fold_bytes,
        bias_bytes,
        parameter_bytes,
        audio_bytes,
        feature_bytes,
        activation_peak_bytes: activation_peak,
        total_bytes,
        tile_peak_bytes: tile_peak,
        budget,
        fits_l2: total_bytes <= budget.l2_bytes,
        fits_l1: tile_peak <= budget.l1_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_plan() -> TilePlan {
        let net = NetworkSpec::reference();
        TilePlan::new(&net, 4, net.required_halo()).unwrap()
    }

    #[test]
    fn same_padding_first_layer() {
        let r = count_macs(&NetworkSpec::reference());
        assert_eq!(r.rows[0].same, 64 * 400 * 32 * 9);
        assert_eq!(r.rows[0].same, 7_372_800);
        assert_eq!(r.rows[1].same, 117_964_800);
    }

    #[test]
    fn one_by_one_closed_form() {
        let net = NetworkSpec::reference();
        let r = count_macs(&net);
        assert_eq!(r.rows[5].same, (16 * 100 * 128 * 128) as u64);
        assert_eq!(r.rows[6].same, (16 * 100 * 28 * 128) as u64);
    }

    #[test]
    fn valid_padding_matches_published_rows() {
        let r = count_macs(&NetworkSpec::reference());
        let valid: Vec<u64> = r.rows.iter().map(|row| row.valid).collect();
        assert_eq!(valid[0], 62 * 398 * 32 * 9);
        assert_eq!(valid[1], 30 * 198 * 64 * 9 * 32);
        for (row, p) in r.rows[..6].iter().zip(PUBLISHED_LAYER_MACS) {
            assert!(rel(row.valid, p).abs() < 0.02, "{row:?}");
        }
        assert!(r.delta_total_valid().unwrap().abs() < 0.01);
        assert!(r.delta_total_same().unwrap() > 0.1);
    }

    #[test]
    fn reference_weights_58k() {
        let net = NetworkSpec::reference();
        let f = footprint(&net, MemoryBudget::default(), &reference_plan(), Precision::Binary);
        assert_eq!(f.weight_bytes, 58_176);
        assert_eq!(f.fold_bytes, 608 * 4 + 76);
        assert_eq!(f.bias_bytes, (32 + 28) * 4);
        assert!(f.fits_l2, "{f:?}");
        assert!(f.total_bytes < 524_288);
    }

    #[test]
    fn fixed16_variant_fails() {
        let net = NetworkSpec::reference();
        let f = footprint(&net, MemoryBudget::default(), &reference_plan(), Precision::Fixed16);
        assert_eq!(f.weight_bytes, 814_656);
        assert!(!f.fits_l2);
    }

    #[test]
    fn double_buffering_costs_memory() {
        let net = NetworkSpec::reference();
        let plan = reference_plan();
        let on = footprint(&net, MemoryBudget::default(), &plan, Precision::Binary);
        let off = footprint(
            &net,
            MemoryBudget {
                double_buffer_weights: false,
                ..MemoryBudget::default()
            },
            &plan,
            Precision::Binary,
        );
        assert!(on.tile_peak_bytes > off.tile_peak_bytes);
        let one = footprint(
            &net,
            MemoryBudget::default(),
            &TilePlan::new(&net, 1, 20).unwrap(),
            Precision::Binary,
        );
        assert!(one.tile_peak_bytes > on.tile_peak_bytes);
    }
}
