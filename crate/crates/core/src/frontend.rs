//! Log-Mel feature extraction: 16 kHz mono audio to a 64x400 fixed-point patch.
//!
//! Frames are 512-sample periodic Hann windows every 128 samples, centred on
//! `t * hop` with reflect padding at the edges, so a 3.2 s patch yields exactly
//! 400 frames. Each frame's one-sided power spectrum is projected onto 64
//! triangular HTK-Mel filters between `fmin` and `fmax`, log-compressed and
//! quantized. The output tensor has the Mel axis as height and time as width.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::{quantize_scalar, Bitwidth, FixedTensor};

/// Fractional bits of the feature patch. Calibrated with the 99.9% rule over
/// silence, noise and tones (see the `default_qformat_is_calibrated` test).
pub const DEFAULT_OUTPUT_QFORMAT: u8 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub frames: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    /// Natural-log compression; `false` keeps linear Mel energies.
    pub log_compress: bool,
    pub output_qformat: u8,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            window: 512,
            hop: 128,
            fft_size: 512,
            mel_bins: 64,
            frames: 400,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
            log_compress: true,
            output_qformat: DEFAULT_OUTPUT_QFORMAT,
        }
    }
}

impl FrontendConfig {
    /// Samples in one patch (3.2 s at the default settings).
    pub fn patch_samples(&self) -> usize {
        self.frames * self.hop
    }

    pub fn spectrum_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return bad("fft_size must be a power of two");
        }
        if self.window != self.fft_size {
            return bad("window must equal fft_size");
        }
        if self.hop == 0 || self.frames == 0 || self.mel_bins == 0 {
            return bad("hop, frames and mel_bins must be positive");
        }
        let band_ok = self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0;
        if !band_ok {
            return bad("require 0 <= fmin < fmax <= Nyquist");
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return bad("log_floor must be positive");
        }
        Ok(())
    }
}

/// HTK Mel scale.
pub fn mel_scale(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `mel_bins x (fft_size/2 + 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub bins: usize,
    pub weights: Vec<f64>,
    /// Centre frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &FrontendConfig) -> Self {
        let bins = cfg.spectrum_bins();
        let lo = mel_scale(cfg.fmin);
        let hi = mel_scale(cfg.fmax);
        let edges: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut weights = vec![0.0; cfg.mel_bins * bins];
        for j in 0..cfg.mel_bins {
            let (l, c, r) = (edges[j], edges[j + 1], edges[j + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let up = (f - l) / (c - l);
                let down = (r - f) / (r - c);
                weights[j * bins + k] = up.min(down).max(0.0);
            }
        }
        MelFilterbank {
            bins,
            weights,
            centers: edges[1..=cfg.mel_bins].to_vec(),
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.bins..(j + 1) * self.bins]
    }

    pub fn filters(&self) -> usize {
        self.centers.len()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.row(j).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

/// In-place iterative radix-2 FFT of a fixed power-of-two size.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<(f64, f64)>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2);
        let bits = n.trailing_zeros();
        let bitrev = (0..n).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect();
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .collect();
        Fft { n, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Forward transform, `X[k] = sum x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let (wr, wi) = self.twiddles[k * step];
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            size *= 2;
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect (mirror without repeating the edge) index into `0..len`.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Windowed frame `t`: samples centred on `t * hop`, reflect-padded.
pub fn frame(audio: &[f64], t: usize, cfg: &FrontendConfig, window: &[f64]) -> Vec<f64> {
    let start = (t * cfg.hop) as isize - (cfg.window / 2) as isize;
    (0..cfg.window)
        .map(|n| audio[reflect(start + n as isize, audio.len())] * window[n])
        .collect()
}

/// Zero-pads `audio` to a full patch, rejecting overlong input.
pub fn pad_patch(audio: &[f64], cfg: &FrontendConfig) -> Result<Vec<f64>> {
    let n = cfg.patch_samples();
    if audio.len() > n {
        return Err(Error::AudioTooLong {
            samples: audio.len(),
            max: n,
        });
    }
    let mut v = audio.to_vec();
    v.resize(n, 0.0);
    Ok(v)
}

/// One-sided power spectrogram, `frames` rows of `fft_size/2 + 1` bins.
pub fn stft_power(audio: &[f64], cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let audio = pad_patch(audio, cfg)?;
    let fft = Fft::new(cfg.fft_size);
    let window = hann(cfg.window);
    let bins = cfg.spectrum_bins();
    Ok((0..cfg.frames)
        .into_par_iter()
        .map(|t| {
            let mut re = frame(&audio, t, cfg, &window);
            let mut im = vec![0.0; cfg.fft_size];
            fft.forward(&mut re, &mut im);
            (0..bins).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
        })
        .collect())
}

/// Real-valued Mel features before quantization, `[mel][frame]`.
pub fn mel_features(audio: &[f64], cfg: &FrontendConfig) -> Result<Vec<f64>> {
    let power = stft_power(audio, cfg)?;
    let fb = MelFilterbank::new(cfg);
    let mut out = vec![0.0; cfg.mel_bins * cfg.frames];
    let mut mel = vec![0.0; cfg.mel_bins];
    for (t, p) in power.iter().enumerate() {
        fb.apply(p, &mut mel);
        for (j, &m) in mel.iter().enumerate() {
            let v = m.max(cfg.log_floor);
            out[j * cfg.frames + t] = if cfg.log_compress { v.ln() } else { v };
        }
    }
    Ok(out)
}

/// Feature patch and the number of saturated elements.
pub fn mel_spectrogram_counted(audio: &[f64], cfg: &FrontendConfig) -> Result<(FixedTensor, usize)> {
    let feats = mel_features(audio, cfg)?;
    let mut saturated = 0;
    let values = feats
        .iter()
        .map(|&v| {
            let (q, sat) = quantize_scalar(v, cfg.output_qformat, Bitwidth::B16);
            saturated += sat as usize;
            q
        })
        .collect();
    Ok((
        FixedTensor::from_parts_unchecked(cfg.mel_bins, cfg.frames, 1, values, cfg.output_qformat, Bitwidth::B16),
        saturated,
    ))
}

/// The network input patch, `mel_bins x frames x 1` in Q`output_qformat`.
pub fn mel_spectrogram(audio: &[f64], cfg: &FrontendConfig) -> Result<FixedTensor> {
    mel_spectrogram_counted(audio, cfg).map(|(t, _)| t)
}

/// Converts 16-bit PCM to floats in [-1, 1).
pub fn pcm_to_float(samples: &[i16]) -> Vec<f64> {
    samples.iter().map(|&s| s as f64 / 32768.0).collect()
}

/// How patches are cut from a clip longer or shorter than one patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkMode {
    /// One patch centred on the middle of the clip.
    Centered,
    /// Consecutive patches; a short tail is dropped unless it is the only chunk.
    All,
}

/// Cuts a clip into patch-sized sample ranges. Short clips give one
/// (to be zero-padded) range.
#[allow(clippy::single_range_in_vec_init)]
pub fn chunk_ranges(len: usize, patch: usize, mode: ChunkMode) -> Vec<std::ops::Range<usize>> {
    if len <= patch {
        return vec![0..len];
    }
    match mode {
        ChunkMode::Centered => {
            let start = len / 2 - patch / 2;
            vec![start..start + patch]
        }
        ChunkMode::All => (0..len / patch).map(|i| i * patch..(i + 1) * patch).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_values() {
        assert_eq!(mel_scale(0.0), 0.0);
        assert!((mel_scale(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
        assert!((mel_scale(700.0) - 781.1728).abs() < 1e-3);
        assert!((mel_scale(8000.0) - 2840.03).abs() < 1e-2);
        assert!((mel_to_hz(mel_scale(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn config_invariants() {
        let c = FrontendConfig::default();
        assert_eq!(c.window as f64, 0.032 * c.sample_rate as f64);
        assert_eq!(c.hop as f64, 0.008 * c.sample_rate as f64);
        assert_eq!(c.patch_samples(), 51_200);
        assert_eq!(c.spectrum_bins(), 257);
        c.validate().unwrap();
    }

    #[test]
    fn filterbank_shape_and_coverage() {
        let cfg = FrontendConfig::default();
        let fb = MelFilterbank::new(&cfg);
        assert_eq!(fb.weights.len(), 64 * 257);
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        for j in 0..64 {
            let row = fb.row(j);
            assert!(row.iter().sum::<f64>() > 0.0, "filter {j} empty");
            // triangular: rises to a single peak then falls
            let peak = row.iter().cloned().fold(0.0, f64::max);
            let p = row.iter().position(|&w| w == peak).unwrap();
            assert!(row[..=p].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[p..].windows(2).all(|w| w[0] >= w[1]));
        }
        // every interior bin is covered by some filter
        for k in 1..256 {
            assert!((0..64).any(|j| fb.row(j)[k] > 0.0), "bin {k} uncovered");
        }
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn chunking() {
        let p = 51_200;
        assert_eq!(chunk_ranges(16_000, p, ChunkMode::Centered), vec![0..16_000]);
        // 10 s clip: centred patch starts at 5.0 s - 1.6 s
        assert_eq!(chunk_ranges(160_000, p, ChunkMode::Centered), vec![54_400..105_600]);
        assert_eq!(chunk_ranges(160_000, p, ChunkMode::All).len(), 3);
        assert_eq!(chunk_ranges(16_000, p, ChunkMode::All), vec![0..16_000]);
    }

    #[test]
    fn rejects_long_audio() {
        let cfg = FrontendConfig::default();
        assert!(matches!(
            stft_power(&vec![0.0; 51_201], &cfg),
            Err(Error::AudioTooLong { .. })
        ));
    }

    #[test]
    fn silence_is_floor_everywhere() {
        let cfg = FrontendConfig::default();
        let t = mel_spectrogram(&[], &cfg).unwrap();
        assert_eq!(t.shape(), (64, 400, 1));
        let floor = quantize_scalar(cfg.log_floor.ln(), cfg.output_qformat, Bitwidth::B16).0;
        assert!(t.values().iter().all(|&v| v == floor));
    }

    #[test]
    fn linear_mel_flag() {
        let cfg = FrontendConfig {
            log_compress: false,
            output_qformat: 0,
            ..Default::default()
        };
        let t = mel_spectrogram(&[], &cfg).unwrap();
        assert!(t.values().iter().all(|&v| v == 0));
    }
}
