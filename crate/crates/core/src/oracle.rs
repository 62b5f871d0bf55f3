//! Slow reference implementations used as ground truth.
//!
//! Nothing here calls into the kernels, the executor or the frontend FFT.
//! Integer oracles are exact; float oracles are plain f64 textbook loops.

use crate::kernels::PoolScores;
use crate::model::{BatchNorm, FloatLayer, FloatModel};
use crate::network::{LayerParams, Model};
use crate::tensors::{FixedTensor, IntTensor, SignTensor, Tensor3};

/// Sign of the batch-normalized value, with sign(0) = +1.
pub fn bn_sign(x: f64, gamma: f64, beta: f64, mean: f64, std: f64) -> bool {
    gamma * ((x - mean) / std) + beta >= 0.0
}

/// Output length of a same-geometry convolution.
fn out_len(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Textbook ±1 convolution, `weights` laid out `[out][ky][kx][in]`.
/// Taps outside the image are skipped.
pub fn naive_binary_conv(
    input: &SignTensor,
    weights: &[i8],
    out_channels: usize,
    ky: usize,
    kx: usize,
    stride: usize,
) -> IntTensor {
    let (h, w, c) = input.shape();
    let (oh, ow) = (out_len(h, stride), out_len(w, stride));
    let mut out = Tensor3::filled(oh, ow, out_channels, 0i32);
    for oy in 0..oh {
        for ox in 0..ow {
            for k in 0..out_channels {
                let mut acc = 0i32;
                for dy in 0..ky {
                    for dx in 0..kx {
                        let iy = (oy * stride + dy) as i64 - (ky / 2) as i64;
                        let ix = (ox * stride + dx) as i64 - (kx / 2) as i64;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        for n in 0..c {
                            let i = input.data[((iy as usize) * w + ix as usize) * c + n] as i32;
                            let wt = weights[((k * ky + dy) * kx + dx) * c + n] as i32;
                            acc += i * wt;
                        }
                    }
                }
                out.data[(oy * ow + ox) * out_channels + k] = acc;
            }
        }
    }
    out
}

/// Second, scatter-style ±1 convolution: every input pixel pushes its
/// contribution to the outputs that see it.
pub fn scatter_binary_conv(
    input: &SignTensor,
    weights: &[i8],
    out_channels: usize,
    ky: usize,
    kx: usize,
    stride: usize,
) -> IntTensor {
    let (h, w, c) = input.shape();
    let (oh, ow) = (out_len(h, stride), out_len(w, stride));
    let mut out = vec![0i32; oh * ow * out_channels];
    let (cy, cx) = ((ky / 2) as i64, (kx / 2) as i64);
    for iy in 0..h as i64 {
        for ix in 0..w as i64 {
            for dy in 0..ky as i64 {
                let sy = iy + cy - dy;
                if sy < 0 || sy % stride as i64 != 0 || sy / stride as i64 >= oh as i64 {
                    continue;
                }
                for dx in 0..kx as i64 {
                    let sx = ix + cx - dx;
                    if sx < 0 || sx % stride as i64 != 0 || sx / stride as i64 >= ow as i64 {
                        continue;
                    }
                    let o = ((sy / stride as i64) as usize * ow + (sx / stride as i64) as usize) * out_channels;
                    let px = &input.data[(iy as usize * w + ix as usize) * c..][..c];
                    for (k, slot) in out[o..o + out_channels].iter_mut().enumerate() {
                        let wrow = &weights[((k * ky + dy as usize) * kx + dx as usize) * c..][..c];
                        *slot += px.iter().zip(wrow).map(|(&a, &b)| a as i32 * b as i32).sum::<i32>();
                    }
                }
            }
        }
    }
    Tensor3 {
        height: oh,
        width: ow,
        channels: out_channels,
        data: out,
    }
}

/// Integer convolution over raw values (i64 accumulation, no rescaling).
fn naive_int_conv(
    input: &Tensor3<i64>,
    weights: &[i32],
    bias: &[i32],
    out_channels: usize,
    ky: usize,
    kx: usize,
    stride: usize,
) -> Tensor3<i64> {
    let (h, w, c) = input.shape();
    let (oh, ow) = (out_len(h, stride), out_len(w, stride));
    let mut out = Tensor3::filled(oh, ow, out_channels, 0i64);
    for oy in 0..oh {
        for ox in 0..ow {
            for k in 0..out_channels {
                let mut acc = bias[k] as i64;
                for dy in 0..ky {
                    for dx in 0..kx {
                        let iy = (oy * stride + dy) as i64 - (ky / 2) as i64;
                        let ix = (ox * stride + dx) as i64 - (kx / 2) as i64;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        for n in 0..c {
                            acc += input.data[((iy as usize) * w + ix as usize) * c + n]
                                * weights[((k * ky + dy) * kx + dx) * c + n] as i64;
                        }
                    }
                }
                out.data[(oy * ow + ox) * out_channels + k] = acc;
            }
        }
    }
    out
}

fn round_shift(x: i64, s: u8) -> i64 {
    if s == 0 {
        x
    } else {
        // floor((x + 2^(s-1)) / 2^s)
        (x + (1i64 << (s - 1))).div_euclid(1i64 << s)
    }
}

/// Applies `p * x >= t` per channel, yielding a ±1 map.
fn threshold_map(x: &Tensor3<i64>, polarity: &[i8], threshold: &[i32]) -> Tensor3<i64> {
    let c = x.channels;
    Tensor3 {
        height: x.height,
        width: x.width,
        channels: c,
        data: x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if polarity[i % c] as i64 * v >= threshold[i % c] as i64 {
                    1
                } else {
                    -1
                }
            })
            .collect(),
    }
}

/// Integer network oracle: unpacked ±1 convolutions and plain threshold
/// comparisons, no bit packing, no windows.
pub fn oracle_network(model: &Model, input: &FixedTensor) -> PoolScores {
    let mut x = Tensor3 {
        height: input.height(),
        width: input.width(),
        channels: input.channels(),
        data: input.values().iter().map(|&v| v as i64).collect(),
    };
    for (shape, params) in model.spec.layers.iter().zip(&model.layers) {
        x = match params {
            LayerParams::Fixed { conv, fold } => {
                let acc = naive_int_conv(
                    &x,
                    &conv.weights,
                    &conv.bias,
                    conv.out_channels,
                    conv.ky,
                    conv.kx,
                    shape.stride,
                );
                let bw = conv.output_bitwidth;
                let scaled = Tensor3 {
                    data: acc
                        .data
                        .iter()
                        .map(|&a| round_shift(a, conv.output_shift).clamp(bw.min(), bw.max()))
                        .collect(),
                    ..acc
                };
                threshold_map(&scaled, fold.polarity(), fold.threshold())
            }
            LayerParams::Binary { weights, fold } => {
                let dense: Vec<i32> = weights.unpack().iter().map(|&v| v as i32).collect();
                let zero = vec![0; weights.out_channels()];
                let (ky, kx) = weights.kernel();
                let acc = naive_int_conv(&x, &dense, &zero, weights.out_channels(), ky, kx, shape.stride);
                threshold_map(&acc, fold.polarity(), fold.threshold())
            }
            LayerParams::Final { conv } => {
                let acc = naive_int_conv(
                    &x,
                    &conv.weights,
                    &conv.bias,
                    conv.out_channels,
                    conv.ky,
                    conv.kx,
                    shape.stride,
                );
                Tensor3 {
                    data: acc.data.iter().map(|&a| round_shift(a, conv.output_shift)).collect(),
                    ..acc
                }
            }
        };
    }
    let mut sums = vec![0i64; x.channels];
    for (i, v) in x.data.iter().enumerate() {
        sums[i % x.channels] += v;
    }
    PoolScores {
        sums,
        count: x.height * x.width,
    }
}

fn float_conv(
    input: &Tensor3<f64>,
    weights: &[f64],
    bias: Option<&[f64]>,
    out_channels: usize,
    ky: usize,
    kx: usize,
    stride: usize,
) -> Tensor3<f64> {
    let (h, w, c) = input.shape();
    let (oh, ow) = (out_len(h, stride), out_len(w, stride));
    let mut out = Tensor3::filled(oh, ow, out_channels, 0.0);
    for oy in 0..oh {
        for ox in 0..ow {
            for k in 0..out_channels {
                let mut acc = bias.map_or(0.0, |b| b[k]);
                for dy in 0..ky {
                    for dx in 0..kx {
                        let iy = (oy * stride + dy) as i64 - (ky / 2) as i64;
                        let ix = (ox * stride + dx) as i64 - (kx / 2) as i64;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        for n in 0..c {
                            acc += input.data[((iy as usize) * w + ix as usize) * c + n]
                                * weights[((k * ky + dy) * kx + dx) * c + n];
                        }
                    }
                }
                out.data[(oy * ow + ox) * out_channels + k] = acc;
            }
        }
    }
    out
}

fn binarize_float(y: &Tensor3<f64>, bn: &BatchNorm) -> Tensor3<f64> {
    let c = y.channels;
    Tensor3 {
        height: y.height,
        width: y.width,
        channels: c,
        data: y
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = i % c;
                if bn_sign(v, bn.gamma[k], bn.beta[k], bn.mean[k], bn.std[k]) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect(),
    }
}

/// Full-precision forward pass: float convolutions, float batch norm, sign
/// to ±1, float average pooling. Returns one mean score per class.
pub fn float_reference_inference(model: &FloatModel, mel: &Tensor3<f64>) -> Vec<f64> {
    let mut x = mel.clone();
    for (shape, layer) in model.spec.layers.iter().zip(&model.layers) {
        let (ky, kx, out) = (shape.ky, shape.kx, shape.out_channels);
        x = match layer {
            FloatLayer::Fixed { weights, bias, bn } => {
                binarize_float(&float_conv(&x, weights, Some(bias), out, ky, kx, shape.stride), bn)
            }
            FloatLayer::Binary { weights, bn } => {
                let signed: Vec<f64> = weights.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
                binarize_float(&float_conv(&x, &signed, None, out, ky, kx, shape.stride), bn)
            }
            FloatLayer::Final { weights, bias } => float_conv(&x, weights, Some(bias), out, ky, kx, shape.stride),
        };
    }
    let n = (x.height * x.width) as f64;
    let mut means = vec![0.0; x.channels];
    for (i, v) in x.data.iter().enumerate() {
        means[i % x.channels] += v;
    }
    means.iter().map(|s| s / n).collect()
}

/// Definition-based DFT of a real frame; returns bins `0..=N/2` as (re, im).
pub fn direct_dft(frame: &[f64]) -> Vec<(f64, f64)> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &x) in frame.iter().enumerate() {
                // reduce k*t mod n first to keep the angle small
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            (re, im)
        })
        .collect()
}

/// How closely a quantized model tracks its float source.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgreementReport {
    pub inputs: usize,
    pub argmax_agree: usize,
    /// Largest `|quantized - float|` class score, relative to the largest
    /// float score magnitude of the same input.
    pub max_relative_score_error: f64,
}

impl AgreementReport {
    pub fn rate(&self) -> f64 {
        self.argmax_agree as f64 / self.inputs.max(1) as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Compares float inference with the integer oracle of `model` on `inputs`.
pub fn argmax_agreement(float: &FloatModel, model: &Model, inputs: &[FixedTensor]) -> AgreementReport {
    let scale = model.score_scale();
    let mut agree = 0;
    let mut worst = 0.0f64;
    for x in inputs {
        let f = float_reference_inference(float, &x.dequantize());
        let q: Vec<f64> = oracle_network(model, x).means().iter().map(|v| v * scale).collect();
        agree += (argmax(&f) == argmax(&q)) as usize;
        let mag = f.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for (a, b) in f.iter().zip(&q) {
            worst = worst.max((a - b).abs() / mag);
        }
    }
    AgreementReport {
        inputs: inputs.len(),
        argmax_agree: agree,
        max_relative_score_error: worst,
    }
}
