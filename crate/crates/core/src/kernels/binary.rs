//! xor/popcount binary convolution.
//!
//! With ±1 values encoded as bits (1 = +1), a 32-channel dot product is
//! `32 - 2 * popcount(i ^ w)`. Padding bits are zero on both sides and so
//! never counted; each output instead starts from `valid_taps * channels`,
//! which also accounts for taps dropped at the image border.

use std::ops::Range;

use rayon::prelude::*;

use super::popcount::{NativePopcount, Popcount, PopcountImpl, PortablePopcount};
use super::{check_stride, check_window, collect_taps, same_out_len, BnFold, ColumnWindow};
use crate::error::{Error, Result};
use crate::tensors::{words_for, BinaryTensor, IntTensor, PackedBinaryWeights, Tensor3};

struct RowCtx<'a> {
    input: &'a BinaryTensor,
    win: ColumnWindow,
    weights: &'a PackedBinaryWeights,
    stride: usize,
    out_cols: Range<usize>,
}

type RowFn = for<'a, 'b> fn(&'a RowCtx<'b>, usize, &mut [i32]);

#[inline(always)]
fn binary_row<P: Popcount>(ctx: &RowCtx<'_>, oy: usize, out: &mut [i32]) {
    let input = ctx.input;
    let w = ctx.weights;
    let n_out = w.out_channels();
    let wpt = w.words_per_tap();
    let channels = input.channels() as i32;
    let iwords = input.words();
    let mut taps = Vec::with_capacity(w.kernel().0 * w.kernel().1);

    for (j, ox) in ctx.out_cols.clone().enumerate() {
        collect_taps(
            &mut taps,
            oy,
            ox,
            ctx.stride,
            w.kernel(),
            input.height(),
            ctx.win,
            input.width(),
        );
        let base = taps.len() as i32 * channels;
        let acc = &mut out[j * n_out..(j + 1) * n_out];
        for (k, slot) in acc.iter_mut().enumerate() {
            let filter = w.filter(k);
            let mut pc = 0u32;
            for &(tap, pixel) in &taps {
                let fw = &filter[tap * wpt..(tap + 1) * wpt];
                let iw = &iwords[pixel * wpt..(pixel + 1) * wpt];
                for (a, b) in iw.iter().zip(fw) {
                    pc += P::count(a ^ b);
                }
            }
            *slot = base - 2 * pc as i32;
        }
    }
}

fn row_native(ctx: &RowCtx<'_>, oy: usize, out: &mut [i32]) {
    binary_row::<NativePopcount>(ctx, oy, out)
}

fn row_portable(ctx: &RowCtx<'_>, oy: usize, out: &mut [i32]) {
    binary_row::<PortablePopcount>(ctx, oy, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn row_popcnt(ctx: &RowCtx<'_>, oy: usize, out: &mut [i32]) {
    binary_row::<NativePopcount>(ctx, oy, out)
}

fn select_row(imp: PopcountImpl) -> RowFn {
    match imp {
        PopcountImpl::Portable => row_portable,
        PopcountImpl::Native => {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("popcnt") {
                    // SAFETY: the popcnt feature was detected at runtime.
                    return |ctx, oy, out| unsafe { row_popcnt(ctx, oy, out) };
                }
            }
            row_native
        }
    }
}

fn prepare<'a>(
    input: &'a BinaryTensor,
    win: ColumnWindow,
    weights: &'a PackedBinaryWeights,
    stride: usize,
    out_cols: Range<usize>,
) -> Result<RowCtx<'a>> {
    check_stride(stride)?;
    if input.channels() != weights.in_channels() {
        return Err(Error::ChannelMismatch {
            input: input.channels(),
            weights: weights.in_channels(),
        });
    }
    check_window(input.width(), win, &out_cols, stride, weights.kernel().1)?;
    Ok(RowCtx {
        input,
        win,
        weights,
        stride,
        out_cols,
    })
}

/// Binary convolution over output columns `out_cols` of a windowed input.
pub fn conv2d_binary_window(
    input: &BinaryTensor,
    win: ColumnWindow,
    weights: &PackedBinaryWeights,
    stride: usize,
    out_cols: Range<usize>,
    imp: PopcountImpl,
) -> Result<IntTensor> {
    let ctx = prepare(input, win, weights, stride, out_cols)?;
    let row = select_row(imp);
    let out_h = same_out_len(input.height(), stride);
    let out_w = ctx.out_cols.len();
    let n_out = weights.out_channels();
    let mut data = vec![0i32; out_h * out_w * n_out];
    if out_w * n_out > 0 {
        data.par_chunks_mut(out_w * n_out)
            .enumerate()
            .for_each(|(oy, out)| row(&ctx, oy, out));
    }
    Ok(Tensor3 {
        height: out_h,
        width: out_w,
        channels: n_out,
        data,
    })
}

/// Binary convolution followed by threshold activation, without
/// materialising the accumulator tensor.
pub fn binary_layer_window(
    input: &BinaryTensor,
    win: ColumnWindow,
    weights: &PackedBinaryWeights,
    fold: &BnFold,
    stride: usize,
    out_cols: Range<usize>,
    imp: PopcountImpl,
) -> Result<BinaryTensor> {
    let ctx = prepare(input, win, weights, stride, out_cols)?;
    let n_out = weights.out_channels();
    if fold.channels() != n_out {
        return Err(Error::ChannelMismatch {
            input: n_out,
            weights: fold.channels(),
        });
    }
    let row = select_row(imp);
    let out_h = same_out_len(input.height(), stride);
    let out_w = ctx.out_cols.len();
    let wpp = words_for(n_out);
    let mut words = vec![0u32; out_h * out_w * wpp];
    if out_w * wpp > 0 {
        words.par_chunks_mut(out_w * wpp).enumerate().for_each_init(
            || vec![0i32; out_w * n_out],
            |acc, (oy, out)| {
                row(&ctx, oy, acc);
                for (px, o) in acc.chunks_exact(n_out).zip(out.chunks_exact_mut(wpp)) {
                    fold.pack_pixel(px, o);
                }
            },
        );
    }
    Ok(BinaryTensor::from_words_unchecked(out_h, out_w, n_out, words))
}

/// Full-map binary convolution with the native popcount path.
pub fn conv2d_binary(input: &BinaryTensor, weights: &PackedBinaryWeights, stride: usize) -> Result<IntTensor> {
    conv2d_binary_with(input, weights, stride, PopcountImpl::Native)
}

pub fn conv2d_binary_with(
    input: &BinaryTensor,
    weights: &PackedBinaryWeights,
    stride: usize,
    imp: PopcountImpl,
) -> Result<IntTensor> {
    let full = same_out_len(input.width(), stride.max(1));
    conv2d_binary_window(input, ColumnWindow::whole(input.width()), weights, stride, 0..full, imp)
}
