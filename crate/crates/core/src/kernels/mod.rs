//! Compute primitives of the network.
//!
//! All convolutions use "same" output geometry: output column `ox` of a
//! stride-`s` layer is centred on input column `ox * s`, and the output has
//! `ceil(len / s)` columns (rows likewise). Taps falling outside the image are
//! excluded from the sum rather than padded.
//!
//! Every kernel has a `*_window` variant operating on a column slice of a
//! wider feature map, which is what tiled execution uses. Border handling
//! always refers to the full map, so a tile computes exactly the same values
//! as the monolithic pass.

mod activation;
mod binary;
mod fixed;
mod pool;
mod popcount;

use std::ops::Range;

use crate::error::{Error, Result};

pub use activation::{binarize_sign, threshold_activation, BnFold};
pub use binary::{binary_layer_window, conv2d_binary, conv2d_binary_window, conv2d_binary_with};
pub use fixed::{conv2d_final, conv2d_final_window, conv2d_fixed, conv2d_fixed_window, rshift_round, FixedConvParams};
pub use pool::{global_avg_pool, predict, PoolScores};
pub use popcount::{NativePopcount, Popcount, PopcountImpl, PortablePopcount};

/// Placement of a tensor's columns inside the full feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnWindow {
    pub offset: usize,
    pub full_width: usize,
}

impl ColumnWindow {
    pub fn whole(width: usize) -> Self {
        ColumnWindow {
            offset: 0,
            full_width: width,
        }
    }

    pub fn end(&self, width: usize) -> usize {
        self.offset + width
    }
}

/// Output extent of a same-geometry convolution.
#[inline]
pub fn same_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Input columns read when producing output columns `out` (clipped to the map).
pub fn input_span(out: &Range<usize>, stride: usize, kernel: usize, full_in: usize) -> Range<usize> {
    if out.is_empty() {
        return 0..0;
    }
    let pad = (kernel - 1) / 2;
    let lo = (out.start * stride).saturating_sub(pad);
    let hi = ((out.end - 1) * stride + kernel - pad).min(full_in);
    lo..hi
}

pub(crate) fn check_stride(stride: usize) -> Result<()> {
    match stride {
        1 | 2 => Ok(()),
        s => Err(Error::Stride(s)),
    }
}

/// Validates that `input` (placed at `win`) holds every column needed for
/// `out_cols`.
pub(crate) fn check_window(
    width: usize,
    win: ColumnWindow,
    out_cols: &Range<usize>,
    stride: usize,
    kx: usize,
) -> Result<()> {
    let full_out = same_out_len(win.full_width, stride);
    if out_cols.end > full_out || out_cols.start > out_cols.end {
        return Err(Error::InvalidArgument(format!(
            "output columns {out_cols:?} outside 0..{full_out}"
        )));
    }
    if win.end(width) > win.full_width {
        return Err(Error::InvalidArgument(format!(
            "window {}..{} exceeds map width {}",
            win.offset,
            win.end(width),
            win.full_width
        )));
    }
    let need = input_span(out_cols, stride, kx, win.full_width);
    if !need.is_empty() && (need.start < win.offset || need.end > win.end(width)) {
        return Err(Error::InvalidArgument(format!(
            "columns {need:?} needed but window holds {}..{}",
            win.offset,
            win.end(width)
        )));
    }
    Ok(())
}

/// Valid taps of a kernel placed at output position `(oy, ox)`.
///
/// Pushes `(tap index dy*kx+dx, input pixel index)` for each tap whose input
/// position lies inside the full map. Pixel indices are local to the window.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn collect_taps(
    taps: &mut Vec<(usize, usize)>,
    oy: usize,
    ox: usize,
    stride: usize,
    (ky, kx): (usize, usize),
    height: usize,
    win: ColumnWindow,
    width: usize,
) {
    taps.clear();
    let (py, px) = ((ky - 1) / 2, (kx - 1) / 2);
    for dy in 0..ky {
        let iy = (oy * stride + dy) as isize - py as isize;
        if iy < 0 || iy >= height as isize {
            continue;
        }
        for dx in 0..kx {
            let ix = (ox * stride + dx) as isize - px as isize;
            if ix < 0 || ix >= win.full_width as isize {
                continue;
            }
            let local = ix as usize - win.offset;
            taps.push((dy * kx + dx, iy as usize * width + local));
        }
    }
}
