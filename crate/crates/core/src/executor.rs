//! End-to-end network execution, monolithic or split into column tiles.
//!
//! Both paths share one routine that computes a range of final output
//! columns from a window of input columns. Each layer only produces the
//! columns its successor reads, and kernels resolve image borders in
//! full-map coordinates, so a tile's contribution equals the same columns of
//! the monolithic run.

use std::ops::Range;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    binarize_sign, binary_layer_window, conv2d_final_window, conv2d_fixed_window, global_avg_pool, input_span, predict,
    same_out_len, ColumnWindow, PoolScores, PopcountImpl,
};
use crate::network::{LayerParams, Model, NetworkSpec};
use crate::tensors::{words_for, BinaryTensor, FixedTensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecOptions {
    pub popcount: PopcountImpl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub scores: PoolScores,
    pub class: usize,
}

impl Inference {
    fn from_scores(scores: PoolScores) -> Self {
        let class = predict(&scores.sums);
        Inference { scores, class }
    }
}

/// Columns of every layer's output needed for final columns `final_cols`.
///
/// Entry `i` is the output range of layer `i`; the extra leading entry is the
/// input range the first layer reads.
pub fn column_ranges(net: &NetworkSpec, final_cols: Range<usize>) -> Vec<Range<usize>> {
    let widths: Vec<usize> = net.shapes().iter().map(|s| s.1).collect();
    let mut ranges = vec![final_cols];
    for (i, l) in net.layers.iter().enumerate().rev() {
        let out = ranges.last().unwrap();
        ranges.push(input_span(out, l.stride, l.kx, widths[i]));
    }
    ranges.reverse();
    ranges
}

fn check_input(input: &FixedTensor, model: &Model, width: usize) -> Result<()> {
    let s = &model.spec;
    let want = (s.input_height, width, s.input_channels);
    if input.shape() != want {
        return Err(Error::ShapeMismatch {
            layer: s.layer_name(0),
            detail: format!("input {:?}, expected {:?}", input.shape(), want),
        });
    }
    if input.qformat() != model.input_qformat {
        return Err(Error::ShapeMismatch {
            layer: s.layer_name(0),
            detail: format!("input in Q{}, model expects Q{}", input.qformat(), model.input_qformat),
        });
    }
    Ok(())
}

/// Working-set size of one layer step: input plus output buffer bytes.
fn step_bytes(input_bytes: usize, output_bytes: usize) -> usize {
    input_bytes + output_bytes
}

/// Runs the network over an input window, producing pooled partial sums for
/// `final_cols`. Calls `on_layer(index, elapsed)` after each layer and
/// returns the peak per-layer working set in bytes.
fn run_columns(
    model: &Model,
    input: &FixedTensor,
    input_offset: usize,
    final_cols: Range<usize>,
    opts: ExecOptions,
    mut on_layer: impl FnMut(usize, Duration),
) -> Result<(PoolScores, usize)> {
    let net = &model.spec;
    let widths: Vec<usize> = net.shapes().iter().map(|s| s.1).collect();
    let ranges = column_ranges(net, final_cols);
    let need = &ranges[0];
    if need.start < input_offset || need.end > input_offset + input.width() {
        return Err(Error::HaloTooSmall {
            halo: 0,
            required: net.required_halo(),
        });
    }

    let mut peak = 0usize;
    let mut binary: Option<BinaryTensor> = None;
    let mut win = ColumnWindow {
        offset: input_offset,
        full_width: widths[0],
    };
    for (i, (shape, params)) in net.layers.iter().zip(&model.layers).enumerate() {
        let t0 = Instant::now();
        let out_cols = ranges[i + 1].clone();
        let in_bytes;
        let next = match params {
            LayerParams::Fixed { conv, fold } => {
                in_bytes = input.size_bytes();
                let fixed = conv2d_fixed_window(input, win, conv, shape.stride, out_cols.clone())?;
                let b = binarize_sign(&fixed, fold)?;
                peak = peak.max(step_bytes(in_bytes, fixed.size_bytes()));
                b
            }
            LayerParams::Binary { weights, fold } => {
                let src = binary.as_ref().expect("binary layer follows a binarizing layer");
                in_bytes = src.size_bytes();
                binary_layer_window(src, win, weights, fold, shape.stride, out_cols.clone(), opts.popcount)?
            }
            LayerParams::Final { conv } => {
                let src = binary.as_ref().expect("final layer follows a binarizing layer");
                let acc = conv2d_final_window(src, win, conv, shape.stride, out_cols.clone())?;
                peak = peak.max(step_bytes(src.size_bytes(), acc.data.len() * 4));
                on_layer(i, t0.elapsed());
                return Ok((global_avg_pool(&acc), peak));
            }
        };
        peak = peak.max(step_bytes(in_bytes, next.size_bytes()));
        on_layer(i, t0.elapsed());
        win = ColumnWindow {
            offset: out_cols.start,
            full_width: widths[i + 1],
        };
        binary = Some(next);
    }
    Err(Error::ShapeMismatch {
        layer: "network".into(),
        detail: "no final layer".into(),
    })
}

/// Whole-image inference.
pub fn run_monolithic(input: &FixedTensor, model: &Model, opts: ExecOptions) -> Result<Inference> {
    run_monolithic_timed(input, model, opts, |_, _| {})
}

/// As [`run_monolithic`], reporting each layer's wall time.
pub fn run_monolithic_timed(
    input: &FixedTensor,
    model: &Model,
    opts: ExecOptions,
    on_layer: impl FnMut(usize, Duration),
) -> Result<Inference> {
    check_input(input, model, model.spec.input_width)?;
    let final_w = model.spec.shapes().last().unwrap().1;
    let (scores, _) = run_columns(model, input, 0, 0..final_w, opts, on_layer)?;
    Ok(Inference::from_scores(scores))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    /// Input columns handed to the tile.
    pub input_cols: Range<usize>,
    /// Final-layer columns the tile is responsible for.
    pub output_cols: Range<usize>,
}

/// Split of the time axis into overlapping tiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub tile_count: usize,
    /// Total overlap between neighbouring tiles, in input columns.
    pub halo: usize,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    /// Balanced split of the final output columns, each tile's input
    /// extended by `halo / 2` columns per side (rounded up).
    pub fn new(net: &NetworkSpec, tile_count: usize, halo: usize) -> Result<Self> {
        net.validate()?;
        let required = net.required_halo();
        if halo < required {
            return Err(Error::HaloTooSmall { halo, required });
        }
        let final_w = net.shapes().last().unwrap().1;
        if tile_count == 0 || tile_count > final_w {
            return Err(Error::TilePlan(format!("tile count {tile_count} not in 1..={final_w}")));
        }
        let jump = net.total_stride();
        let side = halo.div_ceil(2);
        let in_w = net.input_width;
        let tiles = (0..tile_count)
            .map(|t| {
                let a = t * final_w / tile_count;
                let b = (t + 1) * final_w / tile_count;
                let lo = (a * jump).saturating_sub(side);
                let hi = (b * jump + side).min(in_w);
                Tile {
                    input_cols: lo..hi,
                    output_cols: a..b,
                }
            })
            .collect();
        Ok(TilePlan {
            tile_count,
            halo,
            tiles,
        })
    }

    /// Checks the plan covers every output column once and gives each tile
    /// all the input it reads.
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        let required = net.required_halo();
        if self.halo < required {
            return Err(Error::HaloTooSmall {
                halo: self.halo,
                required,
            });
        }
        if self.tiles.len() != self.tile_count {
            return Err(Error::TilePlan("tile count disagrees with tile list".into()));
        }
        let final_w = net.shapes().last().unwrap().1;
        let mut covered = vec![0u32; final_w];
        for t in &self.tiles {
            if t.output_cols.end > final_w || t.input_cols.end > net.input_width {
                return Err(Error::TilePlan(format!("tile {t:?} out of bounds")));
            }
            for c in t.output_cols.clone() {
                covered[c] += 1;
            }
            let need = &column_ranges(net, t.output_cols.clone())[0];
            if !t.output_cols.is_empty() && (need.start < t.input_cols.start || need.end > t.input_cols.end) {
                return Err(Error::HaloTooSmall {
                    halo: self.halo,
                    required,
                });
            }
        }
        if let Some(c) = covered.iter().position(|&n| n != 1) {
            return Err(Error::TilePlan(format!(
                "output column {c} covered {} times",
                covered[c]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileStats {
    pub input_cols: Range<usize>,
    pub output_cols: Range<usize>,
    /// Largest input + output buffer size over the tile's layers.
    pub peak_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiledInference {
    pub inference: Inference,
    pub tiles: Vec<TileStats>,
}

/// Tile-by-tile inference. Bit-identical to [`run_monolithic`].
pub fn run_tiled(input: &FixedTensor, model: &Model, plan: &TilePlan, opts: ExecOptions) -> Result<TiledInference> {
    check_input(input, model, model.spec.input_width)?;
    plan.validate(&model.spec)?;
    let mut total = PoolScores {
        sums: vec![0; model.spec.classes],
        count: 0,
    };
    let mut stats = Vec::with_capacity(plan.tiles.len());
    for tile in &plan.tiles {
        let slice = input.columns(tile.input_cols.clone());
        let (scores, peak) = run_columns(
            model,
            &slice,
            tile.input_cols.start,
            tile.output_cols.clone(),
            opts,
            |_, _| {},
        )?;
        total.merge(&scores);
        stats.push(TileStats {
            input_cols: tile.input_cols.clone(),
            output_cols: tile.output_cols.clone(),
            peak_bytes: peak,
        });
    }
    Ok(TiledInference {
        inference: Inference::from_scores(total),
        tiles: stats,
    })
}

/// Bytes of the binary feature map a layer emits for `cols` output columns.
pub fn binary_map_bytes(height: usize, cols: usize, channels: usize) -> usize {
    height * cols * words_for(channels) * 4
}

/// Output height of every layer, convenience for accounting.
pub fn output_heights(net: &NetworkSpec) -> Vec<usize> {
    let mut h = net.input_height;
    net.layers
        .iter()
        .map(|l| {
            h = same_out_len(h, l.stride);
            h
        })
        .collect()
}
