//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The process fails if any criterion fails, except checks whose failure is
//! explained by the host itself (a multi-thread speedup on a machine with a
//! single hardware thread). Those still print FAIL.

mod common;

use std::time::Instant;

use binsed::accounting::{count_macs, footprint, MemoryBudget, Precision, PUBLISHED_LAYER_MACS, PUBLISHED_TOTAL_MACS};
use binsed::bench::{bench, compare_binary_kernels, synthetic_audio, thread_pool, time_median, BenchOptions};
use binsed::executor::{run_monolithic, run_tiled, ExecOptions, TilePlan};
use binsed::frontend::{mel_features, stft_power, Fft, FrontendConfig, MelFilterbank};
use binsed::kernels::{conv2d_binary, threshold_activation, PopcountImpl};
use binsed::model::{
    fold_batchnorm, gen_random_float_model, gen_random_model, quantize, BatchNorm, FloatLayer, QuantizeOptions,
};
use binsed::network::{LayerKind, NetworkSpec};
use binsed::oracle::{
    argmax_agreement, bn_sign, direct_dft, float_reference_inference, naive_binary_conv, oracle_network,
};
use binsed::tensors::{pack, unpack, Bitwidth, FixedTensor, IntTensor, PackedBinaryWeights, SignTensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure is caused by the host lacking the resources the check needs.
    host_limited: bool,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome {
            pass,
            detail,
            host_limited: false,
        }
    }
}

fn signs(r: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| if r.gen::<bool>() { 1 } else { -1 }).collect()
}

fn criterion_1() -> Outcome {
    const CASES: usize = 10_000;
    let channels = [32usize, 64, 96, 128, 37];
    let mut r = common::rng(0xc1);
    let mut mismatches = 0;
    let mut per_channel = [0usize; 5];
    for case in 0..CASES {
        let ci = case % channels.len();
        let c = channels[ci];
        let h = r.gen_range(1..=16);
        let w = r.gen_range(1..=32);
        let k = if r.gen_bool(0.75) { 3 } else { 1 };
        let stride = r.gen_range(1..=2);
        let out = r.gen_range(1..=8);
        let dense = SignTensor::from_vec(h, w, c, signs(&mut r, h * w * c)).unwrap();
        let wd = signs(&mut r, out * k * k * c);
        let wp = PackedBinaryWeights::pack(out, c, k, k, &wd).unwrap();
        let got = conv2d_binary(&pack(&dense).unwrap(), &wp, stride).unwrap();
        if got != naive_binary_conv(&dense, &wd, out, k, k, stride) {
            mismatches += 1;
        }
        per_channel[ci] += 1;
    }
    Outcome::new(
        mismatches == 0,
        format!("{CASES} cases (channels 32/64/96/128/37: {per_channel:?}), {mismatches} mismatches"),
    )
}

/// Random BN parameters whose switch point falls inside `±range`; a fifth
/// of them are built to put exact ties on integers.
fn random_bn(r: &mut ChaCha8Rng, spread: f64) -> (f64, f64, f64, f64) {
    let g = r.gen_range(0.2..2.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
    if r.gen_bool(0.2) {
        let s = [0.5, 1.0, 2.0, 4.0][r.gen_range(0..4)];
        return (g, 0.0, (r.gen_range(-0.5..0.5) * spread).round(), s);
    }
    (
        g,
        r.gen_range(-1.0..1.0),
        r.gen_range(-0.6..0.6) * spread,
        r.gen_range(0.05..1.5) * spread.max(1.0),
    )
}

fn criterion_2() -> Outcome {
    const SETS: usize = 1000;
    let spec = NetworkSpec::reference();
    let mut r = common::rng(0xc2);
    let mut disagreements = 0u64;
    let mut checked = 0u64;
    let mut shapes = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        if !l.binarizes() {
            continue;
        }
        let (lo, hi) = if l.kind == LayerKind::FixedConv {
            (Bitwidth::B16.min(), Bitwidth::B16.max())
        } else {
            let m = (l.ky * l.kx * l.in_channels) as i64;
            (-m, m)
        };
        let n = (hi - lo + 1) as usize;
        let acc = IntTensor::from_vec(1, n, 1, (lo..=hi).map(|v| v as i32).collect()).unwrap();
        for _ in 0..SETS {
            let (g, b, m, s) = random_bn(&mut r, hi as f64 / 4.0);
            let bn = BatchNorm {
                gamma: vec![g],
                beta: vec![b],
                mean: vec![m],
                std: vec![s],
            };
            let fold = fold_batchnorm(&bn, lo..=hi).unwrap();
            let bits = unpack(&threshold_activation(&acc, &fold).unwrap());
            for (x, &bit) in (lo..=hi).zip(&bits.data) {
                disagreements += ((bit > 0) != bn_sign(x as f64, g, b, m, s)) as u64;
            }
            checked += n as u64;
        }
        shapes.push(format!("{} [{lo},{hi}]", spec.layer_name(i)));
    }
    Outcome::new(
        disagreements == 0,
        format!(
            "{SETS} BN sets x {} layer shapes ({}), {checked} accumulator values, {disagreements} disagreements",
            shapes.len(),
            shapes.join(", ")
        ),
    )
}

fn criterion_3() -> Outcome {
    const PAIRS: u64 = 100;
    let net = NetworkSpec::reference();
    let halo = net.required_halo();
    let plan = TilePlan::new(&net, 4, halo).unwrap();
    let mut mismatches = 0;
    let mut r = common::rng(0xc3);
    for seed in 0..PAIRS {
        let model = gen_random_model(1000 + seed).unwrap();
        let x = common::random_input(&mut r, &model, 16000);
        let mono = run_monolithic(&x, &model, ExecOptions::default()).unwrap();
        let tiled = run_tiled(&x, &model, &plan, ExecOptions::default()).unwrap();
        mismatches += (tiled.inference != mono) as usize;
    }
    Outcome::new(
        mismatches == 0 && halo == 20,
        format!("derived halo {halo} (expected 20), {PAIRS} model/input pairs on 4 tiles, {mismatches} mismatches"),
    )
}

fn criterion_4() -> Outcome {
    let net = NetworkSpec::reference();
    let plan = TilePlan::new(&net, 4, 20).unwrap();
    let bin = footprint(&net, MemoryBudget::default(), &plan, Precision::Binary);
    let f16 = footprint(&net, MemoryBudget::default(), &plan, Precision::Fixed16);
    let weights_ok = (57_000..=60_000).contains(&bin.weight_bytes);
    let f16_ok = (f16.weight_bytes as f64 / 1000.0 - 815.0).abs() <= 815.0 * 0.02 && !f16.fits();
    Outcome::new(
        weights_ok && bin.fits() && f16_ok,
        format!(
            "binary: weights {:.3} kB (params incl. thresholds/biases {:.3} kB), total {:.1} kB, fits 512 KiB: {}; \
             16-bit: weights {:.3} kB, total {:.1} kB, fits: {}",
            bin.weight_bytes as f64 / 1e3,
            bin.parameter_bytes as f64 / 1e3,
            bin.total_bytes as f64 / 1e3,
            bin.fits(),
            f16.weight_bytes as f64 / 1e3,
            f16.total_bytes as f64 / 1e3,
            f16.fits()
        ),
    )
}

fn criterion_5() -> Outcome {
    let r = count_macs(&NetworkSpec::reference());
    let total_delta = r.delta_total_valid().unwrap();
    let first_delta = r.rows[0].delta_valid.unwrap();
    let rows: Vec<String> = r
        .rows
        .iter()
        .zip(PUBLISHED_LAYER_MACS)
        .map(|(row, p)| {
            format!(
                "{} {:.1}M/{:.1}M vs {}M ({:+.1}%/{:+.1}%)",
                row.layer,
                row.valid as f64 / 1e6,
                row.same as f64 / 1e6,
                p / 1_000_000,
                row.delta_valid.unwrap() * 100.0,
                row.delta_same.unwrap() * 100.0
            )
        })
        .collect();
    Outcome::new(
        total_delta.abs() <= 0.10 && first_delta.abs() <= 0.10,
        format!(
            "valid-padding total {:.1}M vs {}M ({:+.1}%), first layer {:+.1}%; executed same-padding total {:.1}M ({:+.1}%); per layer valid/same: {}",
            r.total_valid as f64 / 1e6,
            PUBLISHED_TOTAL_MACS / 1_000_000,
            total_delta * 100.0,
            first_delta * 100.0,
            r.total_same as f64 / 1e6,
            r.delta_total_same().unwrap() * 100.0,
            rows.join("; ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = FrontendConfig::default();
    let fft = Fft::new(cfg.fft_size);
    let mut r = common::rng(0xc6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..cfg.fft_size).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (mut re, mut im) = (x.clone(), vec![0.0; cfg.fft_size]);
        fft.forward(&mut re, &mut im);
        let want = direct_dft(&x);
        let scale = want.iter().map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
        for (k, (wr, wi)) in want.iter().enumerate() {
            worst = worst.max((re[k] - wr).hypot(im[k] - wi) / scale);
        }
    }

    let audio: Vec<f64> = (0..cfg.patch_samples())
        .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16_000.0).sin())
        .collect();
    let power = stft_power(&audio, &cfg).unwrap();
    let feats = mel_features(&audio, &cfg).unwrap();
    let fb = MelFilterbank::new(&cfg);
    let expected_mel = (0..fb.filters())
        .max_by(|&a, &b| fb.row(a)[32].total_cmp(&fb.row(b)[32]))
        .unwrap();
    let interior = 4..cfg.frames - 4;
    let mut bad_frames = 0;
    for t in interior.clone() {
        let peak = (0..power[t].len())
            .max_by(|&a, &b| power[t][a].total_cmp(&power[t][b]))
            .unwrap();
        let mel_peak = (0..cfg.mel_bins)
            .max_by(|&a, &b| feats[a * cfg.frames + t].total_cmp(&feats[b * cfg.frames + t]))
            .unwrap();
        bad_frames += (peak != 32 || mel_peak != expected_mel) as usize;
    }
    let frames = power.len();
    Outcome::new(
        worst < 1e-6 && bad_frames == 0 && frames == 400,
        format!(
            "FFT vs DFT worst relative error {worst:.2e} over 1000 frames; 1 kHz peak at bin 32 and Mel band {expected_mel} \
             ({:.0} Hz centre) in {}/{} interior frames; 3.2 s gives {frames} frames",
            fb.centers[expected_mel],
            interior.len() - bad_frames,
            interior.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let model = gen_random_model(77).unwrap();
    let kernels = compare_binary_kernels(&model, 5, 1).unwrap();
    let min_speedup = kernels.iter().map(|k| k.speedup_vs_naive).fold(f64::INFINITY, f64::min);
    let native: f64 = kernels.iter().map(|k| k.packed_native_ms).sum();
    let portable: f64 = kernels.iter().map(|k| k.packed_portable_ms).sum();

    let x = common::random_input(&mut common::rng(7), &model, 16000);
    let t1 = thread_pool(1)
        .unwrap()
        .install(|| time_median(5, || run_monolithic(&x, &model, ExecOptions::default())));
    let t8 = thread_pool(8)
        .unwrap()
        .install(|| time_median(5, || run_monolithic(&x, &model, ExecOptions::default())));
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());

    let audio = synthetic_audio(model.frontend.patch_samples(), 7);
    let report = bench(
        &model,
        &audio,
        BenchOptions {
            repetitions: 5,
            threads: 1,
            compare_kernels: false,
            ..BenchOptions::default()
        },
    )
    .unwrap();
    let rate = |name: &str| {
        report
            .rows
            .iter()
            .find(|r| r.layer == name)
            .and_then(|r| r.macs_per_s)
            .unwrap()
    };
    let first = rate("First Layer");
    let slowest_bin = (1..=5)
        .map(|i| rate(&format!("{i}. Bin Layer")))
        .fold(f64::INFINITY, f64::min);

    let packed_ok = min_speedup >= 10.0;
    let popcount_ok = native <= portable;
    let threads_ok = t8 < t1;
    let ordering_ok = slowest_bin > first;
    Outcome {
        pass: packed_ok && popcount_ok && threads_ok && ordering_ok,
        host_limited: packed_ok && popcount_ok && ordering_ok && !threads_ok && hw < 2,
        detail: format!(
            "packed vs naive min speedup {min_speedup:.1}x (>= 10: {packed_ok}); native {native:.2} ms vs portable {portable:.2} ms \
             (hardware popcount {}; not slower: {popcount_ok}); end-to-end 1 thread {:.2} ms vs 8 threads {:.2} ms on {hw} hardware \
             thread(s) (faster: {threads_ok}); slowest binary layer {:.0} MMAC/s vs first layer {:.0} MMAC/s (binary more efficient: {ordering_ok})",
            PopcountImpl::hardware_available(),
            t1.as_secs_f64() * 1e3,
            t8.as_secs_f64() * 1e3,
            slowest_bin / 1e6,
            first / 1e6
        ),
    }
}

fn criterion_8(prior: &[Outcome]) -> Outcome {
    let spec = common::small_spec(16, 48);
    let mut agree = 0;
    let mut total = 0;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let float = gen_random_float_model(seed, &spec).unwrap();
        let model = quantize(&float, &QuantizeOptions::default()).unwrap();
        let mut r = common::rng(500 + seed);
        let inputs: Vec<FixedTensor> = (0..5).map(|_| common::random_input(&mut r, &model, 12000)).collect();
        let rep = argmax_agreement(&float, &model, &inputs);
        agree += rep.argmax_agree;
        total += rep.inputs;
        worst = worst.max(rep.max_relative_score_error);
    }

    // high-precision surrogate: exact first layer, 32-bit classifier weights
    let mut float = gen_random_float_model(3, &NetworkSpec::reference()).unwrap();
    if let FloatLayer::Fixed { weights, bias, .. } = &mut float.layers[0] {
        for v in weights.iter_mut().chain(bias.iter_mut()) {
            *v = (*v * 64.0).round() / 64.0;
        }
    }
    let opts = QuantizeOptions {
        first_output_qformat: Some(31),
        first_output_bitwidth: Bitwidth::B32,
        final_weight_bitwidth: Bitwidth::B32,
        ..QuantizeOptions::default()
    };
    let model = quantize(&float, &opts).unwrap();
    let x = common::random_input(&mut common::rng(3), &model, 12000);
    let f = float_reference_inference(&float, &x.dequantize());
    let q: Vec<f64> = oracle_network(&model, &x)
        .means()
        .iter()
        .map(|v| v * model.score_scale())
        .collect();
    let mag = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let surrogate_err = f.iter().zip(&q).map(|(a, b)| (a - b).abs() / mag).fold(0.0, f64::max);

    let exact = prior[..3].iter().all(|o| o.pass);
    Outcome::new(
        exact && surrogate_err <= 1e-4,
        format!(
            "criteria 1-3 bit-exact: {exact}; argmax agreement float vs 16-bit quantized {agree}/{total} \
             (max relative score error {worst:.3}); high-precision surrogate max relative error {surrogate_err:.2e}"
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters pass arguments; the run is all or nothing.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let names = [
        "packed-kernel correctness",
        "threshold-fold correctness",
        "tiling theorem",
        "memory footprint",
        "MAC accounting",
        "frontend correctness",
        "performance smoke",
        "accuracy substitute",
    ];
    let mut outcomes: Vec<Outcome> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let t = Instant::now();
        let o = match i {
            0 => criterion_1(),
            1 => criterion_2(),
            2 => criterion_3(),
            3 => criterion_4(),
            4 => criterion_5(),
            5 => criterion_6(),
            6 => criterion_7(),
            _ => criterion_8(&outcomes),
        };
        println!(
            "criterion {} ({name}): {} [{:.1} s] {}",
            i + 1,
            match (o.pass, o.host_limited) {
                (true, _) => "PASS",
                (false, true) => "FAIL (host-limited)",
                (false, false) => "FAIL",
            },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        outcomes.push(o);
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let blocking = outcomes.iter().filter(|o| !o.pass && !o.host_limited).count();
    let host = outcomes.len() - passed - blocking;
    println!(
        "acceptance: {passed}/{} PASS, {blocking} FAIL, {host} FAIL limited by host hardware",
        outcomes.len()
    );
    if blocking > 0 {
        std::process::exit(1);
    }
}
