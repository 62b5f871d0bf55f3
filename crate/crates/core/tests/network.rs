mod common;

use binsed::bench::thread_pool;
use binsed::executor::{run_monolithic, run_tiled, ExecOptions, TilePlan};
use binsed::kernels::{BnFold, PopcountImpl};
use binsed::model::gen_random_model;
use binsed::network::{LayerParams, NetworkSpec};
use binsed::oracle::oracle_network;
use binsed::tensors::{Bitwidth, FixedTensor, PackedBinaryWeights};
use binsed::Error;
use common::{model_for, random_input, rng, small_spec};

#[test]
fn monolithic_matches_oracle_small() {
    let spec = small_spec(12, 40);
    let mut r = rng(11);
    for seed in 0..12 {
        let model = model_for(&spec, seed);
        let x = random_input(&mut r, &model, 8192);
        let got = run_monolithic(&x, &model, ExecOptions::default()).unwrap();
        assert_eq!(got.scores, oracle_network(&model, &x), "seed {seed}");
    }
}

#[test]
fn portable_popcount_is_bit_identical() {
    let spec = small_spec(12, 40);
    let model = model_for(&spec, 4);
    let x = random_input(&mut rng(4), &model, 8192);
    let native = run_monolithic(
        &x,
        &model,
        ExecOptions {
            popcount: PopcountImpl::Native,
        },
    )
    .unwrap();
    let portable = run_monolithic(
        &x,
        &model,
        ExecOptions {
            popcount: PopcountImpl::Portable,
        },
    )
    .unwrap();
    assert_eq!(native, portable);
}

#[test]
fn monolithic_matches_oracle_reference() {
    let model = gen_random_model(21).unwrap();
    let x = random_input(&mut rng(21), &model, 12000);
    let got = run_monolithic(&x, &model, ExecOptions::default()).unwrap();
    assert_eq!(got.scores, oracle_network(&model, &x));
    assert_eq!(got.scores.count, 1600);
}

#[test]
fn scores_depend_on_input() {
    let spec = small_spec(12, 40);
    let model = model_for(&spec, 2);
    let mut r = rng(2);
    let a = run_monolithic(&random_input(&mut r, &model, 8192), &model, ExecOptions::default()).unwrap();
    let b = run_monolithic(&random_input(&mut r, &model, 8192), &model, ExecOptions::default()).unwrap();
    assert_ne!(a.scores, b.scores);
}

#[test]
fn tiling_theorem_small_networks() {
    let spec = small_spec(10, 64);
    let halo = spec.required_halo();
    let mut r = rng(5);
    for seed in 0..8 {
        let model = model_for(&spec, 100 + seed);
        let x = random_input(&mut r, &model, 10000);
        let mono = run_monolithic(&x, &model, ExecOptions::default()).unwrap();
        for tiles in [1, 2, 3, 4, 5, 16] {
            let plan = TilePlan::new(&spec, tiles, halo).unwrap();
            let tiled = run_tiled(&x, &model, &plan, ExecOptions::default()).unwrap();
            assert_eq!(tiled.inference, mono, "seed {seed}, {tiles} tiles");
        }
    }
}

#[test]
fn tile_order_does_not_matter() {
    let spec = small_spec(10, 64);
    let model = model_for(&spec, 9);
    let x = random_input(&mut rng(9), &model, 10000);
    let mut plan = TilePlan::new(&spec, 4, spec.required_halo()).unwrap();
    let forward = run_tiled(&x, &model, &plan, ExecOptions::default()).unwrap();
    plan.tiles.reverse();
    let backward = run_tiled(&x, &model, &plan, ExecOptions::default()).unwrap();
    assert_eq!(forward.inference, backward.inference);
}

#[test]
fn tiling_theorem_reference() {
    let model = gen_random_model(3).unwrap();
    let x = random_input(&mut rng(3), &model, 12000);
    let mono = run_monolithic(&x, &model, ExecOptions::default()).unwrap();
    for tiles in [1, 2, 3, 4] {
        let plan = TilePlan::new(&model.spec, tiles, 20).unwrap();
        let tiled = run_tiled(&x, &model, &plan, ExecOptions::default()).unwrap();
        assert_eq!(tiled.inference, mono);
        assert_eq!(tiled.tiles.len(), tiles);
        assert!(tiled.tiles.iter().all(|t| t.peak_bytes > 0));
    }
}

#[test]
fn short_halo_rejected() {
    let net = NetworkSpec::reference();
    assert_eq!(
        TilePlan::new(&net, 4, 18),
        Err(Error::HaloTooSmall { halo: 18, required: 20 })
    );
    let model = gen_random_model(1).unwrap();
    let x = random_input(&mut rng(1), &model, 100);
    let mut plan = TilePlan::new(&net, 4, 20).unwrap();
    plan.tiles[1].input_cols.start += 4;
    assert!(matches!(
        run_tiled(&x, &model, &plan, ExecOptions::default()),
        Err(Error::HaloTooSmall { .. })
    ));
}

#[test]
fn deterministic_across_threads_and_calls() {
    let model = gen_random_model(8).unwrap();
    let zero = FixedTensor::new(64, 400, 1, vec![0; 64 * 400], model.input_qformat, Bitwidth::B16).unwrap();
    let x = random_input(&mut rng(8), &model, 12000);
    let one = thread_pool(1).unwrap();
    let four = thread_pool(4).unwrap();
    for input in [&zero, &x] {
        let a = one
            .install(|| run_monolithic(input, &model, ExecOptions::default()))
            .unwrap();
        let b = four
            .install(|| run_monolithic(input, &model, ExecOptions::default()))
            .unwrap();
        let c = run_monolithic(input, &model, ExecOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}

#[test]
fn all_ones_closed_form() {
    let spec = small_spec(12, 40);
    let mut model = model_for(&spec, 6);
    for (shape, params) in spec.layers.iter().zip(model.layers.iter_mut()) {
        match params {
            LayerParams::Fixed { fold, .. } => *fold = BnFold::always_on(shape.out_channels),
            LayerParams::Binary { weights, fold } => {
                let ones = vec![1i8; shape.weight_count()];
                *weights = PackedBinaryWeights::pack(shape.out_channels, shape.in_channels, shape.ky, shape.kx, &ones)
                    .unwrap();
                *fold = BnFold::always_on(shape.out_channels);
            }
            LayerParams::Final { .. } => {}
        }
    }
    let LayerParams::Final { conv } = model.layers.last().unwrap() else {
        panic!("last layer is final")
    };
    let (h, w, _) = *spec.shapes().last().unwrap();
    let expect: Vec<i64> = (0..conv.out_channels)
        .map(|k| {
            let row = &conv.weights[k * conv.in_channels..(k + 1) * conv.in_channels];
            let per_pixel = row.iter().map(|&v| v as i64).sum::<i64>() + conv.bias[k] as i64;
            per_pixel * (h * w) as i64
        })
        .collect();
    let x = random_input(&mut rng(6), &model, 30000);
    let got = run_monolithic(&x, &model, ExecOptions::default()).unwrap();
    assert_eq!(got.scores.sums, expect);
    assert_eq!(got.scores.count, h * w);
}

#[test]
fn shape_mismatch_names_first_layer() {
    let model = gen_random_model(1).unwrap();
    let x = FixedTensor::new(64, 399, 1, vec![0; 64 * 399], model.input_qformat, Bitwidth::B16).unwrap();
    match run_monolithic(&x, &model, ExecOptions::default()) {
        Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, "First Layer"),
        other => panic!("{other:?}"),
    }
    let x = FixedTensor::new(64, 400, 1, vec![0; 64 * 400], model.input_qformat + 1, Bitwidth::B16).unwrap();
    assert!(run_monolithic(&x, &model, ExecOptions::default())
        .unwrap_err()
        .is_shape_mismatch());
}

#[test]
fn random_model_activations_are_mixed() {
    use binsed::kernels::{binarize_sign, conv2d_binary, conv2d_fixed, threshold_activation};
    use binsed::tensors::unpack;
    let model = gen_random_model(12).unwrap();
    let x = random_input(&mut rng(12), &model, 12000);
    let mut maps = Vec::new();
    let mut cur = None;
    for (shape, params) in model.spec.layers.iter().zip(&model.layers) {
        let next = match params {
            LayerParams::Fixed { conv, fold } => {
                binarize_sign(&conv2d_fixed(&x, conv, shape.stride).unwrap(), fold).unwrap()
            }
            LayerParams::Binary { weights, fold } => threshold_activation(
                &conv2d_binary(cur.as_ref().unwrap(), weights, shape.stride).unwrap(),
                fold,
            )
            .unwrap(),
            LayerParams::Final { .. } => break,
        };
        maps.push(unpack(&next));
        cur = Some(next);
    }
    for (i, m) in maps.iter().enumerate() {
        let ones = m.data.iter().filter(|&&v| v > 0).count() as f64 / m.data.len() as f64;
        assert!((0.15..0.85).contains(&ones), "layer {i}: {ones}");
    }
}
