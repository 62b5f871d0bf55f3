#![allow(dead_code)]

use binsed::model::{gen_random_float_model, quantize, QuantizeOptions};
use binsed::network::{LayerKind, LayerShape, Model, NetworkSpec};
use binsed::tensors::{Bitwidth, FixedTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference layer structure at reduced size, with a 37-channel layer to
/// exercise masked words.
pub fn small_spec(height: usize, width: usize) -> NetworkSpec {
    let l = |kind, k, cin, cout, stride| LayerShape {
        kind,
        ky: k,
        kx: k,
        in_channels: cin,
        out_channels: cout,
        stride,
    };
    use LayerKind::*;
    NetworkSpec {
        input_height: height,
        input_width: width,
        input_channels: 1,
        classes: 5,
        layers: vec![
            l(FixedConv, 3, 1, 8, 1),
            l(BinaryConv, 3, 8, 37, 2),
            l(BinaryConv, 3, 37, 64, 1),
            l(BinaryConv, 3, 64, 33, 2),
            l(BinaryConv, 3, 33, 40, 1),
            l(BinaryConv, 1, 40, 40, 1),
            l(FinalConv, 1, 40, 5, 1),
        ],
    }
}

pub fn model_for(spec: &NetworkSpec, seed: u64) -> Model {
    let float = gen_random_float_model(seed, spec).unwrap();
    quantize(&float, &QuantizeOptions::default()).unwrap()
}

/// Uniform Q-format input with values spread over `±span`.
pub fn random_input(rng: &mut ChaCha8Rng, model: &Model, span: i32) -> FixedTensor {
    let s = &model.spec;
    let n = s.input_height * s.input_width * s.input_channels;
    let values = (0..n).map(|_| rng.gen_range(-span..=span)).collect();
    FixedTensor::new(
        s.input_height,
        s.input_width,
        s.input_channels,
        values,
        model.input_qformat,
        Bitwidth::B16,
    )
    .unwrap()
}
