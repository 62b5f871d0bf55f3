//! Fixed-point convolutions for the first and last layers.

use std::ops::Range;

use rayon::prelude::*;

use super::{check_stride, check_window, collect_taps, same_out_len, ColumnWindow};
use crate::error::{Error, Result};
use crate::tensors::{BinaryTensor, Bitwidth, FixedTensor, IntTensor, Tensor3, WORD_BITS};

/// Integer weights, bias and rescaling of a fixed-point convolution.
///
/// Weights are `[out][ky][kx][in]` in Q`weight_qformat`. The bias lives in
/// the accumulator domain (input Q + weight Q). Accumulators are rescaled by
/// a rounding right shift of `output_shift` and saturated to
/// `output_bitwidth`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedConvParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub ky: usize,
    pub kx: usize,
    pub weights: Vec<i32>,
    pub weight_qformat: u8,
    pub weight_bitwidth: Bitwidth,
    pub bias: Vec<i32>,
    pub output_shift: u8,
    pub output_bitwidth: Bitwidth,
}

impl FixedConvParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.out_channels * self.ky * self.kx * self.in_channels;
        if self.weights.len() != n {
            return Err(Error::BufferLength {
                expected: n,
                actual: self.weights.len(),
            });
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::BufferLength {
                expected: self.out_channels,
                actual: self.bias.len(),
            });
        }
        if self.ky.is_multiple_of(2) || self.kx.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel {}x{} must have odd extents",
                self.ky, self.kx
            )));
        }
        let bw = self.weight_bitwidth;
        for (index, &w) in self.weights.iter().enumerate() {
            if (w as i64) < bw.min() || (w as i64) > bw.max() {
                return Err(Error::OutOfRange {
                    index,
                    value: w as i64,
                    bits: bw.bits(),
                });
            }
        }
        if self.output_shift >= 32 {
            return Err(Error::InvalidArgument(format!(
                "output shift {} too large",
                self.output_shift
            )));
        }
        Ok(())
    }

    /// Worst-case |accumulator| for inputs bounded by `max_abs_input`.
    pub fn accumulator_bound(&self, max_abs_input: u64) -> u128 {
        let max_w = self.weights.iter().map(|w| w.unsigned_abs()).max().unwrap_or(0) as u128;
        let max_b = self.bias.iter().map(|b| b.unsigned_abs()).max().unwrap_or(0) as u128;
        (self.ky * self.kx * self.in_channels) as u128 * max_w * max_abs_input as u128 + max_b
    }

    /// Rejects parameters whose 32-bit accumulator could overflow.
    pub fn check_accumulator(&self, max_abs_input: u64, layer: &str) -> Result<()> {
        let worst_case = self.accumulator_bound(max_abs_input);
        if worst_case >= 1u128 << 31 {
            return Err(Error::AccumulatorOverflow {
                layer: layer.to_string(),
                worst_case,
            });
        }
        Ok(())
    }

    #[inline]
    fn filter(&self, k: usize) -> &[i32] {
        let len = self.ky * self.kx * self.in_channels;
        &self.weights[k * len..(k + 1) * len]
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }
}

/// `x / 2^shift` rounded half up (adds `2^(shift-1)` before an arithmetic shift).
#[inline]
pub fn rshift_round(x: i64, shift: u8) -> i64 {
    if shift == 0 {
        x
    } else {
        (x + (1i64 << (shift - 1))) >> shift
    }
}

/// Fixed-point convolution over output columns `out_cols` of a windowed input.
pub fn conv2d_fixed_window(
    input: &FixedTensor,
    win: ColumnWindow,
    p: &FixedConvParams,
    stride: usize,
    out_cols: Range<usize>,
) -> Result<FixedTensor> {
    check_stride(stride)?;
    if input.channels() != p.in_channels {
        return Err(Error::ChannelMismatch {
            input: input.channels(),
            weights: p.in_channels,
        });
    }
    let out_q = (input.qformat() as i32 + p.weight_qformat as i32) - p.output_shift as i32;
    if out_q < 0 {
        return Err(Error::InvalidArgument(format!(
            "output shift {} exceeds accumulator fraction bits",
            p.output_shift
        )));
    }
    check_window(input.width(), win, &out_cols, stride, p.kx)?;

    let out_h = same_out_len(input.height(), stride);
    let out_w = out_cols.len();
    let n_out = p.out_channels;
    let cin = p.in_channels;
    let values = input.values();
    let mut data = vec![0i32; out_h * out_w * n_out];
    if out_w * n_out > 0 {
        data.par_chunks_mut(out_w * n_out)
            .enumerate()
            .for_each_init(Vec::new, |taps, (oy, row)| {
                for (j, ox) in out_cols.clone().enumerate() {
                    collect_taps(taps, oy, ox, stride, (p.ky, p.kx), input.height(), win, input.width());
                    for k in 0..n_out {
                        let f = p.filter(k);
                        let mut acc = p.bias[k];
                        for &(tap, pixel) in taps.iter() {
                            let fw = &f[tap * cin..(tap + 1) * cin];
                            let iv = &values[pixel * cin..(pixel + 1) * cin];
                            for (a, b) in iv.iter().zip(fw) {
                                acc += a * b;
                            }
                        }
                        row[j * n_out + k] = p.output_bitwidth.saturate(rshift_round(acc as i64, p.output_shift));
                    }
                }
            });
    }
    Ok(FixedTensor::from_parts_unchecked(
        out_h,
        out_w,
        n_out,
        data,
        out_q as u8,
        p.output_bitwidth,
    ))
}

pub fn conv2d_fixed(input: &FixedTensor, p: &FixedConvParams, stride: usize) -> Result<FixedTensor> {
    let full = same_out_len(input.width(), stride.max(1));
    conv2d_fixed_window(input, ColumnWindow::whole(input.width()), p, stride, 0..full)
}

/// Fixed-point convolution of a ±1 feature map (the classifier layer).
///
/// Each tap contributes `+w` for a set bit and `-w` for a clear one. Output is
/// the rescaled 32-bit accumulator in Q`weight_qformat - output_shift`.
pub fn conv2d_final_window(
    input: &BinaryTensor,
    win: ColumnWindow,
    p: &FixedConvParams,
    stride: usize,
    out_cols: Range<usize>,
) -> Result<IntTensor> {
    check_stride(stride)?;
    if input.channels() != p.in_channels {
        return Err(Error::ChannelMismatch {
            input: input.channels(),
            weights: p.in_channels,
        });
    }
    check_window(input.width(), win, &out_cols, stride, p.kx)?;

    let out_h = same_out_len(input.height(), stride);
    let out_w = out_cols.len();
    let n_out = p.out_channels;
    let cin = p.in_channels;
    let wpp = input.words_per_pixel();
    let words = input.words();
    let mut data = vec![0i32; out_h * out_w * n_out];
    if out_w * n_out > 0 {
        data.par_chunks_mut(out_w * n_out)
            .enumerate()
            .for_each_init(Vec::new, |taps, (oy, row)| {
                for (j, ox) in out_cols.clone().enumerate() {
                    collect_taps(taps, oy, ox, stride, (p.ky, p.kx), input.height(), win, input.width());
                    for k in 0..n_out {
                        let f = p.filter(k);
                        let mut acc = p.bias[k];
                        for &(tap, pixel) in taps.iter() {
                            let fw = &f[tap * cin..(tap + 1) * cin];
                            let px = &words[pixel * wpp..(pixel + 1) * wpp];
                            for (n, &w) in fw.iter().enumerate() {
                                if (px[n / WORD_BITS] >> (n % WORD_BITS)) & 1 == 1 {
                                    acc += w;
                                } else {
                                    acc -= w;
                                }
                            }
                        }
                        row[j * n_out + k] = rshift_round(acc as i64, p.output_shift) as i32;
                    }
                }
            });
    }
    Ok(Tensor3 {
        height: out_h,
        width: out_w,
        channels: n_out,
        data,
    })
}

pub fn conv2d_final(input: &BinaryTensor, p: &FixedConvParams, stride: usize) -> Result<IntTensor> {
    let full = same_out_len(input.width(), stride.max(1));
    conv2d_final_window(input, ColumnWindow::whole(input.width()), p, stride, 0..full)
}
