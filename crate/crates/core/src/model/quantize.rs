use std::ops::RangeInclusive;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use super::{BatchNorm, FloatLayer, FloatModel};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::kernels::{BnFold, FixedConvParams};
use crate::network::{LayerParams, LayerShape, Model};
use crate::oracle::bn_sign;
use crate::tensors::{quantize_scalar, Bitwidth, PackedBinaryWeights};

/// Fold ranges up to this many integers are verified value by value; wider
/// ranges are verified at the boundary and the end points, which is
/// sufficient because the float batch-norm sign is monotone in `x`.
pub const FOLD_EXHAUSTIVE_LIMIT: i64 = 1 << 22;

/// Largest fractional-bit count at which at least 99.9% of `values` fit in
/// `bitwidth` signed bits without saturating. Capped at `bitwidth - 1`.
pub fn choose_qformat(values: &[f64], bitwidth: Bitwidth) -> Result<u8> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("choose_qformat needs at least one value".into()));
    }
    let max = bitwidth.max() as f64;
    let n = values.len();
    for f in (0..bitwidth.bits() as u8).rev() {
        let scale = (f as f64).exp2();
        let fits = values.iter().filter(|&&v| (v * scale).round().abs() <= max).count();
        if fits * 1000 >= n * 999 {
            return Ok(f);
        }
    }
    Ok(0)
}

/// Attainable accumulator range of a binary layer.
pub(crate) fn binary_range(shape: &LayerShape) -> RangeInclusive<i64> {
    let m = (shape.ky * shape.kx * shape.in_channels) as i64;
    -m..=m
}

fn exact(v: f64) -> Option<BigRational> {
    BigRational::from_float(v)
}

fn clamp_big(v: &BigInt, lo: i64, hi: i64) -> i64 {
    if *v < BigInt::from(lo) {
        lo
    } else if *v > BigInt::from(hi) {
        hi
    } else {
        v.to_i64().expect("clamped into i64")
    }
}

/// First `x` in `range` where `polarity * x >= threshold` disagrees with the
/// float batch-norm sign.
fn first_disagreement(
    polarity: i64,
    threshold: i64,
    bn: (f64, f64, f64, f64),
    range: &RangeInclusive<i64>,
) -> Option<i64> {
    let (g, b, m, s) = bn;
    let agrees = |x: i64| (polarity * x >= threshold) == bn_sign(x as f64, g, b, m, s);
    let (lo, hi) = (*range.start(), *range.end());
    if hi - lo < FOLD_EXHAUSTIVE_LIMIT {
        return (lo..=hi).find(|&x| !agrees(x));
    }
    let mut probes = vec![lo, hi];
    for t in [threshold - 1, threshold] {
        probes.push(polarity * t);
    }
    probes.into_iter().filter(|x| range.contains(x)).find(|&x| !agrees(x))
}

/// Threshold from the float predicate directly, by bisection over its
/// monotone switch point.
fn float_boundary(polarity: i64, bn: (f64, f64, f64, f64), range: &RangeInclusive<i64>) -> i64 {
    let (g, b, m, s) = bn;
    let pred = |x: i64| bn_sign(x as f64, g, b, m, s);
    let (lo, hi) = (*range.start(), *range.end());
    if polarity > 0 {
        // smallest true x
        if !pred(hi) {
            return hi + 1;
        }
        let (mut a, mut z) = (lo, hi);
        while a < z {
            let mid = a + (z - a) / 2;
            if pred(mid) {
                z = mid;
            } else {
                a = mid + 1;
            }
        }
        a
    } else {
        // largest true x
        if !pred(lo) {
            return -lo + 1;
        }
        let (mut a, mut z) = (lo, hi);
        while a < z {
            let mid = a + (z - a + 1) / 2;
            if pred(mid) {
                a = mid;
            } else {
                z = mid - 1;
            }
        }
        -a
    }
}

/// Folds batch norm + sign into a polarity and integer threshold per channel.
///
/// The threshold is the exact rational `ceil(mean - beta * std / gamma)`
/// (negated for `gamma < 0`), clamped to the attainable `range`, and is then
/// checked against the float batch-norm sign over the whole range.
pub fn fold_batchnorm(bn: &BatchNorm, range: RangeInclusive<i64>) -> Result<BnFold> {
    let n = bn.channels();
    if [bn.beta.len(), bn.mean.len(), bn.std.len()] != [n; 3] {
        return Err(Error::BufferLength {
            expected: n,
            actual: bn.beta.len().min(bn.mean.len()).min(bn.std.len()),
        });
    }
    let mut polarity = Vec::with_capacity(n);
    let mut threshold = Vec::with_capacity(n);
    for k in 0..n {
        let (g, b, m, s) = (bn.gamma[k], bn.beta[k], bn.mean[k], bn.std[k]);
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::NonPositiveSigma {
                channel: k,
                sigma: s.to_string(),
            });
        }
        if g == 0.0 {
            return Err(Error::ZeroGamma { channel: k });
        }
        let (eg, eb, em, es) = match (exact(g), exact(b), exact(m), exact(s)) {
            (Some(g), Some(b), Some(m), Some(s)) => (g, b, m, s),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "channel {k}: non-finite batch-norm parameter"
                )))
            }
        };
        // BN(x) >= 0  <=>  x >= tau (gamma > 0)  or  x <= tau (gamma < 0)
        let tau = em - eb * es / eg.clone();
        let pol: i64 = if eg.is_positive() { 1 } else { -1 };
        let t_exact = if pol > 0 {
            tau.ceil().to_integer()
        } else {
            -tau.floor().to_integer()
        };
        let (lo, hi) = (*range.start(), *range.end());
        let (plo, phi) = if pol > 0 { (lo, hi) } else { (-hi, -lo) };
        let clamp_hi = (phi + 1).min(i32::MAX as i64);
        let clamp_lo = plo.max(i32::MIN as i64);
        let mut t = clamp_big(&t_exact, clamp_lo, clamp_hi);
        let params = (g, b, m, s);
        if first_disagreement(pol, t, params, &range).is_some() {
            t = float_boundary(pol, params, &range).clamp(clamp_lo, clamp_hi);
            if let Some(x) = first_disagreement(pol, t, params, &range) {
                return Err(Error::FoldMismatch { channel: k, x });
            }
        }
        debug_assert!(!t_exact.is_zero() || t == 0 || t == clamp_lo || t == clamp_hi || true);
        polarity.push(pol as i8);
        threshold.push(t as i32);
    }
    BnFold::new(polarity, threshold)
}

/// Packs float weights by sign, with sign(0) = +1.
pub fn binarize_weights(
    weights: &[f64],
    out_channels: usize,
    in_channels: usize,
    ky: usize,
    kx: usize,
) -> Result<PackedBinaryWeights> {
    let dense = weights
        .iter()
        .enumerate()
        .map(|(index, &w)| {
            if w.is_nan() {
                Err(Error::NanWeight { index })
            } else if w >= 0.0 {
                Ok(1i8)
            } else {
                Ok(-1i8)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    PackedBinaryWeights::pack(out_channels, in_channels, ky, kx, &dense)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeOptions {
    pub frontend: FrontendConfig,
    /// Q-format of the network input; defaults to the frontend's.
    pub input_qformat: u8,
    /// Q-format of the first layer's output; `None` keeps the input's.
    pub first_output_qformat: Option<u8>,
    pub first_output_bitwidth: Bitwidth,
    pub final_weight_bitwidth: Bitwidth,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        let frontend = FrontendConfig::default();
        QuantizeOptions {
            input_qformat: frontend.output_qformat,
            frontend,
            first_output_qformat: None,
            first_output_bitwidth: Bitwidth::B16,
            final_weight_bitwidth: Bitwidth::B16,
        }
    }
}

/// Quantizes a fixed-point convolution, lowering the weight Q-format until
/// the 32-bit accumulator bound holds.
fn quantize_conv(
    shape: &LayerShape,
    name: &str,
    weights: &[f64],
    bias: &[f64],
    weight_bitwidth: Bitwidth,
    input_qformat: u8,
    max_abs_input: u64,
) -> Result<FixedConvParams> {
    let mut f = choose_qformat(weights, weight_bitwidth)?;
    loop {
        let w: Vec<i32> = weights
            .iter()
            .map(|&v| quantize_scalar(v, f, weight_bitwidth).0)
            .collect();
        let b: Vec<i32> = bias
            .iter()
            .map(|&v| quantize_scalar(v, f + input_qformat, Bitwidth::B32).0)
            .collect();
        let p = FixedConvParams {
            out_channels: shape.out_channels,
            in_channels: shape.in_channels,
            ky: shape.ky,
            kx: shape.kx,
            weights: w,
            weight_qformat: f,
            weight_bitwidth,
            bias: b,
            output_shift: 0,
            output_bitwidth: Bitwidth::B32,
        };
        match p.check_accumulator(max_abs_input, name) {
            Ok(()) => return Ok(p),
            Err(e) if f == 0 => return Err(e),
            Err(_) => f -= 1,
        }
    }
}

/// Turns float parameters into a runnable integer model.
pub fn quantize(float: &FloatModel, opts: &QuantizeOptions) -> Result<Model> {
    float.validate()?;
    let spec = &float.spec;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, (shape, layer)) in spec.layers.iter().zip(&float.layers).enumerate() {
        let name = spec.layer_name(i);
        let params = match layer {
            FloatLayer::Fixed { weights, bias, bn } => {
                let f_in = opts.input_qformat;
                let mut conv = quantize_conv(shape, &name, weights, bias, Bitwidth::B16, f_in, 1 << 15)?;
                let acc_q = f_in + conv.weight_qformat;
                let f_out = opts.first_output_qformat.unwrap_or(f_in).min(acc_q);
                conv.output_shift = acc_q - f_out;
                conv.output_bitwidth = opts.first_output_bitwidth;
                let bw = opts.first_output_bitwidth;
                let fold = fold_batchnorm(&bn.scaled(f_out), bw.min()..=bw.max())?;
                LayerParams::Fixed { conv, fold }
            }
            FloatLayer::Binary { weights, bn } => {
                let packed = binarize_weights(weights, shape.out_channels, shape.in_channels, shape.ky, shape.kx)?;
                let fold = fold_batchnorm(bn, binary_range(shape))?;
                LayerParams::Binary { weights: packed, fold }
            }
            FloatLayer::Final { weights, bias } => {
                let conv = quantize_conv(shape, &name, weights, bias, opts.final_weight_bitwidth, 0, 1)?;
                LayerParams::Final { conv }
            }
        };
        layers.push(params);
    }
    let model = Model {
        spec: spec.clone(),
        frontend: opts.frontend.clone(),
        input_qformat: opts.input_qformat,
        layers,
    };
    model.validate()?;
    Ok(model)
}
