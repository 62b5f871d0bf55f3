use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{quantize, BatchNorm, FloatLayer, FloatModel, QuantizeOptions};
use crate::error::Result;
use crate::network::{LayerKind, Model, NetworkSpec};

fn batchnorm(rng: &mut ChaCha8Rng, channels: usize, spread: f64) -> BatchNorm {
    let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    BatchNorm {
        gamma: (0..channels).map(|_| sign(rng) * rng.gen_range(0.5..1.5)).collect(),
        beta: (0..channels).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        mean: (0..channels).map(|_| rng.gen_range(-0.5..0.5) * spread).collect(),
        std: (0..channels).map(|_| rng.gen_range(0.5..1.5) * spread).collect(),
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

/// Random float parameters for `spec`, with batch-norm statistics scaled
/// to the spread each layer's accumulator actually has.
pub fn gen_random_float_model(seed: u64, spec: &NetworkSpec) -> Result<FloatModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layers
        .iter()
        .map(|l| {
            let fan_in = (l.ky * l.kx * l.in_channels) as f64;
            let n = l.weight_count();
            match l.kind {
                LayerKind::FixedConv => FloatLayer::Fixed {
                    weights: uniform(&mut rng, n, 0.5),
                    bias: uniform(&mut rng, l.out_channels, 0.1),
                    // log-Mel inputs sit around -10 with a few units of spread
                    bn: batchnorm(&mut rng, l.out_channels, 3.0 * fan_in.sqrt()),
                },
                LayerKind::BinaryConv => FloatLayer::Binary {
                    weights: uniform(&mut rng, n, 1.0),
                    bn: batchnorm(&mut rng, l.out_channels, fan_in.sqrt()),
                },
                LayerKind::FinalConv => FloatLayer::Final {
                    weights: uniform(&mut rng, n, 1.0 / fan_in.sqrt()),
                    bias: uniform(&mut rng, l.out_channels, 0.1),
                },
            }
        })
        .collect();
    let m = FloatModel {
        spec: spec.clone(),
        layers,
    };
    m.validate()?;
    Ok(m)
}

/// A quantized random model on the reference topology.
pub fn gen_random_model(seed: u64) -> Result<Model> {
    let float = gen_random_float_model(seed, &NetworkSpec::reference())?;
    quantize(&float, &QuantizeOptions::default())
}
