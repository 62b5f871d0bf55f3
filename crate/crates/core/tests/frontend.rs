mod common;

use std::f64::consts::PI;

use binsed::frontend::{
    frame, hann, mel_features, mel_spectrogram, mel_spectrogram_counted, stft_power, Fft, FrontendConfig,
    MelFilterbank, DEFAULT_OUTPUT_QFORMAT,
};
use binsed::model::choose_qformat;
use binsed::oracle::direct_dft;
use binsed::tensors::Bitwidth;
use rand::Rng;

fn sine(freq: f64, amp: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
        .collect()
}

fn noise(seed: u64, amp: f64, n: usize) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..n).map(|_| r.gen_range(-amp..amp)).collect()
}

#[test]
fn fft_matches_direct_dft() {
    let fft = Fft::new(512);
    let mut r = common::rng(77);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..512).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut re = x.clone();
        let mut im = vec![0.0; 512];
        fft.forward(&mut re, &mut im);
        let want = direct_dft(&x);
        let scale = want.iter().map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
        for (k, (wr, wi)) in want.iter().enumerate() {
            let err = (re[k] - wr).hypot(im[k] - wi) / scale;
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn fft_small_sizes() {
    for n in [2, 4, 8, 64] {
        let fft = Fft::new(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let (mut re, mut im) = (x.clone(), vec![0.0; n]);
        fft.forward(&mut re, &mut im);
        for (k, (wr, wi)) in direct_dft(&x).iter().enumerate() {
            assert!((re[k] - wr).abs() < 1e-9 && (im[k] - wi).abs() < 1e-9);
        }
    }
}

#[test]
fn sine_1khz_peaks_at_bin_32_and_its_mel_band() {
    let cfg = FrontendConfig::default();
    let audio = sine(1000.0, 0.5, cfg.patch_samples());
    let power = stft_power(&audio, &cfg).unwrap();
    assert_eq!(power.len(), 400);
    let fb = MelFilterbank::new(&cfg);
    let expected_mel = (0..fb.filters())
        .max_by(|&a, &b| fb.row(a)[32].total_cmp(&fb.row(b)[32]))
        .unwrap();
    let nearest = (0..fb.filters())
        .min_by(|&a, &b| {
            (fb.centers[a] - 1000.0)
                .abs()
                .total_cmp(&(fb.centers[b] - 1000.0).abs())
        })
        .unwrap();
    assert_eq!(expected_mel, nearest);

    let feats = mel_features(&audio, &cfg).unwrap();
    let interior = 4..cfg.frames - 4;
    for t in interior {
        let peak = (0..power[t].len())
            .max_by(|&a, &b| power[t][a].total_cmp(&power[t][b]))
            .unwrap();
        assert_eq!(peak, 32, "frame {t}");
        let mel_peak = (0..cfg.mel_bins)
            .max_by(|&a, &b| feats[a * cfg.frames + t].total_cmp(&feats[b * cfg.frames + t]))
            .unwrap();
        assert_eq!(mel_peak, expected_mel, "frame {t}");
    }
}

#[test]
fn patch_is_64_by_400() {
    let cfg = FrontendConfig::default();
    assert_eq!(cfg.patch_samples(), 51_200);
    let m = mel_spectrogram(&noise(1, 0.1, 51_200), &cfg).unwrap();
    assert_eq!(m.shape(), (64, 400, 1));
    assert_eq!(m.qformat(), DEFAULT_OUTPUT_QFORMAT);
    let short = mel_spectrogram(&noise(1, 0.1, 10_000), &cfg).unwrap();
    assert_eq!(short.shape(), (64, 400, 1));
}

#[test]
fn impulse_has_flat_magnitude() {
    let cfg = FrontendConfig::default();
    let window = hann(cfg.window);
    let mut audio = vec![0.0; cfg.patch_samples()];
    // centre of frame 100
    audio[100 * cfg.hop] = 1.0;
    let f = frame(&audio, 100, &cfg, &window);
    let nonzero: Vec<usize> = (0..f.len()).filter(|&i| f[i] != 0.0).collect();
    assert_eq!(nonzero, vec![cfg.window / 2]);
    let power = stft_power(&audio, &cfg).unwrap();
    for p in &power[100] {
        assert!((p - 1.0).abs() < 1e-9);
    }
    assert!(power[50].iter().all(|&p| p == 0.0));
}

#[test]
fn white_noise_does_not_saturate() {
    let cfg = FrontendConfig::default();
    for (seed, amp) in [(1, 1.0), (2, 0.5), (3, 1e-3)] {
        let (_, saturated) = mel_spectrogram_counted(&noise(seed, amp, cfg.patch_samples()), &cfg).unwrap();
        assert_eq!(saturated, 0);
    }
    let (_, saturated) = mel_spectrogram_counted(&sine(440.0, 1.0, cfg.patch_samples()), &cfg).unwrap();
    assert_eq!(saturated, 0);
}

#[test]
fn default_qformat_is_calibrated() {
    let cfg = FrontendConfig::default();
    let n = cfg.patch_samples();
    let mut corpus = vec![vec![0.0; n], noise(4, 1.0, n), noise(5, 0.01, n)];
    for f in [100.0, 1000.0, 4000.0, 7900.0] {
        corpus.push(sine(f, 1.0, n));
    }
    let mut mixed = sine(2500.0, 0.3, n / 2);
    mixed.extend(vec![0.0; n / 2]);
    corpus.push(mixed);
    let values: Vec<f64> = corpus.iter().flat_map(|a| mel_features(a, &cfg).unwrap()).collect();
    assert_eq!(choose_qformat(&values, Bitwidth::B16).unwrap(), DEFAULT_OUTPUT_QFORMAT);
}

#[test]
fn frontend_is_deterministic() {
    let cfg = FrontendConfig::default();
    let audio = noise(9, 0.3, cfg.patch_samples());
    let a = mel_spectrogram(&audio, &cfg).unwrap();
    let pool = binsed::bench::thread_pool(3).unwrap();
    let b = pool.install(|| mel_spectrogram(&audio, &cfg)).unwrap();
    assert_eq!(a, b);
}
