//! Bit-packed binary tensors and fixed-point integer tensors.
//!
//! Binary values are stored with one bit per channel, 32 channels per word,
//! channel-innermost: `[height][width][words_per_pixel]`. Bit `b` of word `w`
//! at a pixel holds channel `32 * w + b`; a set bit is logical +1, a clear bit
//! logical -1. Bits beyond `channels` in the last word are always zero.

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 32;

/// Number of 32-bit words needed to hold `channels` bits.
#[inline]
pub const fn words_for(channels: usize) -> usize {
    channels.div_ceil(WORD_BITS)
}

/// Mask of the valid bits in the last word of a pixel.
#[inline]
pub const fn last_word_mask(channels: usize) -> u32 {
    match channels % WORD_BITS {
        0 => u32::MAX,
        r => (1u32 << r) - 1,
    }
}

/// Plain dense `[height][width][channels]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Tensor3<T> {
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }
}

impl<T> Tensor3<T> {
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor3 {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> &T {
        &self.data[self.index(y, x, c)]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// Dense ±1 tensor (one `i8` per element).
pub type SignTensor = Tensor3<i8>;

/// 32-bit integer accumulators, e.g. binary convolution outputs.
pub type IntTensor = Tensor3<i32>;

/// Bit-packed ±1 activations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTensor {
    height: usize,
    width: usize,
    channels: usize,
    words: Vec<u32>,
}

impl BinaryTensor {
    /// All-(-1) tensor of the given shape.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        BinaryTensor {
            height,
            width,
            channels,
            words: vec![0; height * width * words_for(channels)],
        }
    }

    /// Wraps raw words, rejecting wrong lengths and set padding bits.
    pub fn from_words(height: usize, width: usize, channels: usize, words: Vec<u32>) -> Result<Self> {
        let wpp = words_for(channels);
        let expected = height * width * wpp;
        if words.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: words.len(),
            });
        }
        check_padding(&words, wpp, channels)?;
        Ok(BinaryTensor {
            height,
            width,
            channels,
            words,
        })
    }

    pub(crate) fn from_words_unchecked(height: usize, width: usize, channels: usize, words: Vec<u32>) -> Self {
        debug_assert_eq!(words.len(), height * width * words_for(channels));
        BinaryTensor {
            height,
            width,
            channels,
            words,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn words_per_pixel(&self) -> usize {
        words_for(self.channels)
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    /// The packed words of pixel `(y, x)`.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[u32] {
        let wpp = self.words_per_pixel();
        let start = (y * self.width + x) * wpp;
        &self.words[start..start + wpp]
    }

    /// Logical value (+1 or -1) at `(y, x, c)`.
    pub fn get(&self, y: usize, x: usize, c: usize) -> i8 {
        let w = self.pixel(y, x)[c / WORD_BITS];
        if (w >> (c % WORD_BITS)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Copy of the columns `cols` (all rows, all channels).
    pub fn columns(&self, cols: std::ops::Range<usize>) -> BinaryTensor {
        assert!(cols.end <= self.width);
        let wpp = self.words_per_pixel();
        let mut words = Vec::with_capacity(self.height * cols.len() * wpp);
        for y in 0..self.height {
            let row = y * self.width;
            words.extend_from_slice(&self.words[(row + cols.start) * wpp..(row + cols.end) * wpp]);
        }
        BinaryTensor::from_words_unchecked(self.height, cols.len(), self.channels, words)
    }

    pub fn size_bytes(&self) -> usize {
        self.words.len() * 4
    }
}

/// Packed ±1 convolution weights, `[out][ky][kx][words_for(in)]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBinaryWeights {
    out_channels: usize,
    in_channels: usize,
    ky: usize,
    kx: usize,
    words: Vec<u32>,
}

impl PackedBinaryWeights {
    pub fn from_words(out_channels: usize, in_channels: usize, ky: usize, kx: usize, words: Vec<u32>) -> Result<Self> {
        let wpp = words_for(in_channels);
        let expected = out_channels * ky * kx * wpp;
        if words.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: words.len(),
            });
        }
        check_padding(&words, wpp, in_channels)?;
        Ok(PackedBinaryWeights {
            out_channels,
            in_channels,
            ky,
            kx,
            words,
        })
    }

    /// Packs a dense `[out][ky][kx][in]` ±1 array.
    pub fn pack(out_channels: usize, in_channels: usize, ky: usize, kx: usize, dense: &[i8]) -> Result<Self> {
        let expected = out_channels * ky * kx * in_channels;
        if dense.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: dense.len(),
            });
        }
        let words = pack_rows(dense, in_channels)?;
        Ok(PackedBinaryWeights {
            out_channels,
            in_channels,
            ky,
            kx,
            words,
        })
    }

    /// Dense `[out][ky][kx][in]` ±1 array.
    pub fn unpack(&self) -> Vec<i8> {
        unpack_rows(&self.words, self.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.ky, self.kx)
    }

    pub fn words_per_tap(&self) -> usize {
        words_for(self.in_channels)
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    /// Words of the whole kernel of output channel `k`, `[ky][kx][wpt]`.
    #[inline]
    pub fn filter(&self, k: usize) -> &[u32] {
        let len = self.ky * self.kx * self.words_per_tap();
        &self.words[k * len..(k + 1) * len]
    }

    /// Storage at one bit per weight.
    pub fn size_bytes_packed_bits(&self) -> usize {
        (self.out_channels * self.ky * self.kx * self.in_channels).div_ceil(8)
    }
}

fn check_padding(words: &[u32], wpp: usize, channels: usize) -> Result<()> {
    if wpp == 0 {
        return Ok(());
    }
    let mask = last_word_mask(channels);
    for (i, w) in words.iter().enumerate().skip(wpp - 1).step_by(wpp) {
        if w & !mask != 0 {
            return Err(Error::PaddingBitsSet { word: i, channels });
        }
    }
    Ok(())
}

fn pack_rows(dense: &[i8], channels: usize) -> Result<Vec<u32>> {
    let wpp = words_for(channels);
    if channels == 0 {
        return Ok(Vec::new());
    }
    let mut words = Vec::with_capacity(dense.len() / channels * wpp);
    for (row, chunk) in dense.chunks_exact(channels).enumerate() {
        for (wi, group) in chunk.chunks(WORD_BITS).enumerate() {
            let mut word = 0u32;
            for (b, &v) in group.iter().enumerate() {
                match v {
                    1 => word |= 1 << b,
                    -1 => {}
                    other => {
                        return Err(Error::NotSign {
                            index: row * channels + wi * WORD_BITS + b,
                            value: other as i64,
                        })
                    }
                }
            }
            words.push(word);
        }
    }
    Ok(words)
}

fn unpack_rows(words: &[u32], channels: usize) -> Vec<i8> {
    let wpp = words_for(channels);
    if wpp == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(words.len() / wpp * channels);
    for pixel in words.chunks_exact(wpp) {
        for c in 0..channels {
            let bit = (pixel[c / WORD_BITS] >> (c % WORD_BITS)) & 1;
            out.push(if bit == 1 { 1 } else { -1 });
        }
    }
    out
}

/// Packs a dense ±1 tensor. Bit = (value + 1) / 2.
pub fn pack(dense: &SignTensor) -> Result<BinaryTensor> {
    let words = pack_rows(&dense.data, dense.channels)?;
    Ok(BinaryTensor::from_words_unchecked(
        dense.height,
        dense.width,
        dense.channels,
        words,
    ))
}

/// Inverse of [`pack`].
pub fn unpack(t: &BinaryTensor) -> SignTensor {
    Tensor3 {
        height: t.height,
        width: t.width,
        channels: t.channels,
        data: unpack_rows(&t.words, t.channels),
    }
}

/// Storage width of a fixed-point value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Bitwidth {
    B16,
    B32,
}

impl Bitwidth {
    pub fn bits(self) -> u32 {
        match self {
            Bitwidth::B16 => 16,
            Bitwidth::B32 => 32,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn max(self) -> i64 {
        (1i64 << (self.bits() - 1)) - 1
    }

    pub fn min(self) -> i64 {
        -(1i64 << (self.bits() - 1))
    }

    #[inline]
    pub fn saturate(self, v: i64) -> i32 {
        v.clamp(self.min(), self.max()) as i32
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            16 => Some(Bitwidth::B16),
            32 => Some(Bitwidth::B32),
            _ => None,
        }
    }
}

/// Integer tensor representing `value * 2^-qformat`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<i32>,
    qformat: u8,
    bitwidth: Bitwidth,
}

impl FixedTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<i32>,
        qformat: u8,
        bitwidth: Bitwidth,
    ) -> Result<Self> {
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: values.len(),
            });
        }
        for (index, &v) in values.iter().enumerate() {
            let v = v as i64;
            if v < bitwidth.min() || v > bitwidth.max() {
                return Err(Error::OutOfRange {
                    index,
                    value: v,
                    bits: bitwidth.bits(),
                });
            }
        }
        Ok(FixedTensor {
            height,
            width,
            channels,
            values,
            qformat,
            bitwidth,
        })
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<i32>,
        qformat: u8,
        bitwidth: Bitwidth,
    ) -> Self {
        FixedTensor {
            height,
            width,
            channels,
            values,
            qformat,
            bitwidth,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn qformat(&self) -> u8 {
        self.qformat
    }

    pub fn bitwidth(&self) -> Bitwidth {
        self.bitwidth
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> i32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    pub fn dequantize(&self) -> Tensor3<f64> {
        let scale = (-(self.qformat as f64)).exp2();
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.values.iter().map(|&v| v as f64 * scale).collect(),
        }
    }

    /// Copy of the columns `cols` (all rows, all channels).
    pub fn columns(&self, cols: std::ops::Range<usize>) -> FixedTensor {
        assert!(cols.end <= self.width);
        let c = self.channels;
        let mut values = Vec::with_capacity(self.height * cols.len() * c);
        for y in 0..self.height {
            let row = y * self.width;
            values.extend_from_slice(&self.values[(row + cols.start) * c..(row + cols.end) * c]);
        }
        FixedTensor::from_parts_unchecked(self.height, cols.len(), c, values, self.qformat, self.bitwidth)
    }

    pub fn size_bytes(&self) -> usize {
        self.values.len() * self.bitwidth.bytes()
    }
}

/// Round-to-nearest (ties away from zero) of `value * 2^f`, saturated.
///
/// Returns the integer and whether it saturated. NaN maps to 0 and counts
/// as saturated.
#[inline]
pub fn quantize_scalar(value: f64, f: u8, bitwidth: Bitwidth) -> (i32, bool) {
    if value.is_nan() {
        return (0, true);
    }
    let scaled = (value * (f as f64).exp2()).round();
    if scaled > bitwidth.max() as f64 {
        (bitwidth.max() as i32, true)
    } else if scaled < bitwidth.min() as f64 {
        (bitwidth.min() as i32, true)
    } else {
        (scaled as i32, false)
    }
}

/// Result of [`quantize_real`]: the tensor plus how many elements saturated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantized {
    pub tensor: FixedTensor,
    pub saturated: usize,
}

pub fn quantize_real(values: &Tensor3<f64>, f: u8, bitwidth: Bitwidth) -> Quantized {
    let mut saturated = 0;
    let ints = values
        .data
        .iter()
        .map(|&v| {
            let (q, sat) = quantize_scalar(v, f, bitwidth);
            saturated += sat as usize;
            q
        })
        .collect();
    Quantized {
        tensor: FixedTensor::from_parts_unchecked(values.height, values.width, values.channels, ints, f, bitwidth),
        saturated,
    }
}
