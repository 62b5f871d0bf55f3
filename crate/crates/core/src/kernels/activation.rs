use crate::error::{Error, Result};
use crate::tensors::{words_for, BinaryTensor, FixedTensor, IntTensor, WORD_BITS};

/// Folded batch norm + sign: per output channel a polarity and an integer
/// threshold. Output bit is 1 iff `polarity * x >= threshold`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnFold {
    polarity: Vec<i8>,
    threshold: Vec<i32>,
}

impl BnFold {
    pub fn new(polarity: Vec<i8>, threshold: Vec<i32>) -> Result<Self> {
        if polarity.len() != threshold.len() {
            return Err(Error::BufferLength {
                expected: polarity.len(),
                actual: threshold.len(),
            });
        }
        if let Some(index) = polarity.iter().position(|&p| p != 1 && p != -1) {
            return Err(Error::NotSign {
                index,
                value: polarity[index] as i64,
            });
        }
        Ok(BnFold { polarity, threshold })
    }

    /// Every channel fires for every input.
    pub fn always_on(channels: usize) -> Self {
        BnFold {
            polarity: vec![1; channels],
            threshold: vec![i32::MIN; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.polarity.len()
    }

    pub fn polarity(&self) -> &[i8] {
        &self.polarity
    }

    pub fn threshold(&self) -> &[i32] {
        &self.threshold
    }

    #[inline(always)]
    pub fn apply(&self, channel: usize, x: i32) -> bool {
        self.polarity[channel] as i64 * x as i64 >= self.threshold[channel] as i64
    }

    /// Packs one pixel of accumulators into words.
    #[inline]
    pub(crate) fn pack_pixel(&self, acc: &[i32], out: &mut [u32]) {
        out.fill(0);
        for (k, &x) in acc.iter().enumerate() {
            if self.apply(k, x) {
                out[k / WORD_BITS] |= 1 << (k % WORD_BITS);
            }
        }
    }
}

fn check_channels(have: usize, fold: &BnFold) -> Result<()> {
    if have != fold.channels() {
        return Err(Error::ChannelMismatch {
            input: have,
            weights: fold.channels(),
        });
    }
    Ok(())
}

/// Sign binarization of a fixed-point feature map through a folded batch norm.
pub fn binarize_sign(x: &FixedTensor, fold: &BnFold) -> Result<BinaryTensor> {
    check_channels(x.channels(), fold)?;
    Ok(pack_through(x.height(), x.width(), x.channels(), x.values(), fold))
}

/// Threshold activation of binary-convolution accumulators.
pub fn threshold_activation(acc: &IntTensor, fold: &BnFold) -> Result<BinaryTensor> {
    check_channels(acc.channels, fold)?;
    Ok(pack_through(acc.height, acc.width, acc.channels, &acc.data, fold))
}

fn pack_through(h: usize, w: usize, c: usize, values: &[i32], fold: &BnFold) -> BinaryTensor {
    let wpp = words_for(c);
    let mut words = vec![0u32; h * w * wpp];
    if c > 0 {
        for (px, out) in values.chunks_exact(c).zip(words.chunks_exact_mut(wpp)) {
            fold.pack_pixel(px, out);
        }
    }
    BinaryTensor::from_words_unchecked(h, w, c, words)
}
