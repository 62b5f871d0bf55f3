//! Per-layer timing of the full pipeline plus kernel comparisons.
//!
//! Each measurement runs once as a warm-up, then `repetitions` more times;
//! the report keeps the median.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::{count_macs, macs_with, Padding};
use crate::error::{Error, Result};
use crate::executor::{run_monolithic_timed, ExecOptions};
use crate::frontend::mel_spectrogram;
use crate::kernels::{conv2d_binary_with, PopcountImpl};
use crate::network::{LayerKind, Model};
use crate::oracle::naive_binary_conv;
use crate::tensors::{pack, FixedTensor, PackedBinaryWeights, SignTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub layer: String,
    /// Executed (same-padding) MACs; `None` for the frontend.
    pub macs: Option<u64>,
    /// MACs under the valid-padding convention of the published table.
    pub macs_valid: Option<u64>,
    pub time_ms: f64,
    pub macs_per_s: Option<f64>,
    /// Summary row that repeats other rows' work; excluded from the total.
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelComparison {
    pub layer: String,
    pub macs: u64,
    pub naive_ms: f64,
    pub packed_native_ms: f64,
    pub packed_portable_ms: f64,
    pub speedup_vs_naive: f64,
    pub native_vs_portable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub threads: usize,
    pub repetitions: usize,
    pub popcount: PopcountImpl,
    pub popcount_hardware: bool,
    /// Per-layer rows, the merged row, and the total last.
    pub rows: Vec<BenchRow>,
    pub comparisons: Vec<KernelComparison>,
}

impl BenchReport {
    pub fn total(&self) -> &BenchRow {
        self.rows.last().expect("report has a total row")
    }

    /// One JSON object per line: rows, then comparisons, then a summary.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out += &serde_json::json!({"record": "layer", "row": r}).to_string();
            out.push('\n');
        }
        for c in &self.comparisons {
            out += &serde_json::json!({"record": "kernel", "row": c}).to_string();
            out.push('\n');
        }
        out += &serde_json::json!({
            "record": "summary",
            "threads": self.threads,
            "repetitions": self.repetitions,
            "popcount": self.popcount,
            "popcount_hardware": self.popcount_hardware,
        })
        .to_string();
        out.push('\n');
        out
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>10} {:>10} {:>12} {:>12}\n",
            "Layer", "MACs", "valid", "time [ms]", "MAC/s"
        );
        let m = |v: Option<u64>| v.map_or("-".to_string(), |v| format!("{:.1}M", v as f64 / 1e6));
        for r in &self.rows {
            s += &format!(
                "{:<14} {:>10} {:>10} {:>12.3} {:>12}\n",
                r.layer,
                m(r.macs),
                m(r.macs_valid),
                r.time_ms,
                r.macs_per_s.map_or("-".to_string(), |v| format!("{:.0}M", v / 1e6)),
            );
        }
        s += &format!(
            "\n{:<14} {:>10} {:>10} {:>12} {:>12} {:>9} {:>9}\n",
            "Kernel", "MACs", "naive ms", "native ms", "portable ms", "x naive", "nat/port"
        );
        for c in &self.comparisons {
            s += &format!(
                "{:<14} {:>10} {:>10.2} {:>12.3} {:>12.3} {:>9.1} {:>9.2}\n",
                c.layer,
                m(Some(c.macs)),
                c.naive_ms,
                c.packed_native_ms,
                c.packed_portable_ms,
                c.speedup_vs_naive,
                c.native_vs_portable
            );
        }
        s += &format!(
            "threads: {}  repetitions: {}  popcount: {:?}\n",
            self.threads, self.repetitions, self.popcount
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub repetitions: usize,
    pub threads: usize,
    pub popcount: PopcountImpl,
    /// Repetitions of the naive kernel; it is slow, so this is separate.
    pub naive_repetitions: usize,
    pub compare_kernels: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repetitions: 5,
            threads: 1,
            popcount: PopcountImpl::Native,
            naive_repetitions: 1,
            compare_kernels: true,
        }
    }
}

pub fn median(mut xs: Vec<Duration>) -> Duration {
    assert!(!xs.is_empty(), "median of no samples");
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Median wall time of `f` over `reps` runs after one discarded warm-up.
pub fn time_median<T>(reps: usize, mut f: impl FnMut() -> T) -> Duration {
    std::hint::black_box(f());
    median(
        (0..reps.max(1))
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(f());
                t.elapsed()
            })
            .collect(),
    )
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn random_signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()
}

/// Packed (both popcount paths) vs naive ±1 convolution on every binary
/// layer shape of `model`, single-threaded.
pub fn compare_binary_kernels(model: &Model, reps: usize, naive_reps: usize) -> Result<Vec<KernelComparison>> {
    let pool = thread_pool(1)?;
    let shapes = model.spec.shapes();
    let macs = macs_with(&model.spec, Padding::Same);
    let mut rng = ChaCha8Rng::seed_from_u64(0xb1);
    let mut out = Vec::new();
    for (i, l) in model.spec.layers.iter().enumerate() {
        if l.kind != LayerKind::BinaryConv {
            continue;
        }
        let (h, w, c) = shapes[i];
        let dense = SignTensor::from_vec(h, w, c, random_signs(&mut rng, h * w * c))?;
        let packed_in = pack(&dense)?;
        let wd = random_signs(&mut rng, l.weight_count());
        let wp = PackedBinaryWeights::pack(l.out_channels, l.in_channels, l.ky, l.kx, &wd)?;
        let (native, portable, naive) = pool.install(|| {
            let native = time_median(reps, || {
                conv2d_binary_with(&packed_in, &wp, l.stride, PopcountImpl::Native)
            });
            let portable = time_median(reps, || {
                conv2d_binary_with(&packed_in, &wp, l.stride, PopcountImpl::Portable)
            });
            let naive = time_median(naive_reps, || {
                naive_binary_conv(&dense, &wd, l.out_channels, l.ky, l.kx, l.stride)
            });
            (native, portable, naive)
        });
        out.push(KernelComparison {
            layer: model.spec.layer_name(i),
            macs: macs[i],
            naive_ms: ms(naive),
            packed_native_ms: ms(native),
            packed_portable_ms: ms(portable),
            speedup_vs_naive: naive.as_secs_f64() / native.as_secs_f64(),
            native_vs_portable: portable.as_secs_f64() / native.as_secs_f64(),
        });
    }
    Ok(out)
}

fn row(layer: &str, macs: Option<u64>, valid: Option<u64>, t: Duration, merged: bool) -> BenchRow {
    let time_ms = ms(t);
    BenchRow {
        layer: layer.to_string(),
        macs,
        macs_valid: valid,
        time_ms,
        macs_per_s: macs.map(|m| m as f64 / t.as_secs_f64().max(1e-12)),
        merged,
    }
}

/// Times the frontend on `audio` and every network layer on the resulting
/// patch, inside a pool of `opts.threads` threads.
pub fn bench(model: &Model, audio: &[f64], opts: BenchOptions) -> Result<BenchReport> {
    if opts.repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    let pool = thread_pool(opts.threads)?;
    let n_layers = model.spec.layers.len();
    let exec = ExecOptions {
        popcount: opts.popcount,
    };
    let (mel_time, layer_times) = pool.install(|| -> Result<_> {
        let mut features = mel_spectrogram(audio, &model.frontend)?;
        let mel_time = time_median(opts.repetitions, || mel_spectrogram(audio, &model.frontend));
        if features.qformat() != model.input_qformat {
            features = FixedTensor::new(
                features.height(),
                features.width(),
                features.channels(),
                features.values().to_vec(),
                model.input_qformat,
                features.bitwidth(),
            )?;
        }
        let mut samples: Vec<Vec<Duration>> = vec![Vec::new(); n_layers];
        for rep in 0..=opts.repetitions {
            run_monolithic_timed(&features, model, exec, |i, d| {
                if rep > 0 {
                    samples[i].push(d);
                }
            })?;
        }
        Ok((mel_time, samples.into_iter().map(median).collect::<Vec<_>>()))
    })?;

    let macs = count_macs(&model.spec);
    let mut rows = vec![row("Mel bins", None, None, mel_time, false)];
    for (i, t) in layer_times.iter().enumerate() {
        let r = &macs.rows[i];
        rows.push(row(&r.layer, Some(r.same), Some(r.valid), *t, false));
    }
    if n_layers >= 2 {
        let (a, b) = (&macs.rows[n_layers - 2], &macs.rows[n_layers - 1]);
        rows.push(row(
            "5./6. Layer",
            Some(a.same + b.same),
            Some(a.valid + b.valid),
            layer_times[n_layers - 2] + layer_times[n_layers - 1],
            true,
        ));
    }
    let total_t = mel_time + layer_times.iter().sum::<Duration>();
    rows.push(row(
        "Total",
        Some(macs.total_same),
        Some(macs.total_valid),
        total_t,
        false,
    ));

    let comparisons = if opts.compare_kernels {
        compare_binary_kernels(model, opts.repetitions, opts.naive_repetitions)?
    } else {
        Vec::new()
    };
    Ok(BenchReport {
        threads: pool.current_num_threads(),
        repetitions: opts.repetitions,
        popcount: opts.popcount,
        popcount_hardware: PopcountImpl::hardware_available(),
        rows,
        comparisons,
    })
}

/// A deterministic audio patch for benchmarks: noise plus two tones.
pub fn synthetic_audio(samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|n| {
            let t = n as f64 / 16_000.0;
            0.3 * (2.0 * std::f64::consts::PI * 1000.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 3150.0 * t).sin()
                + rng.gen_range(-0.1..0.1)
        })
        .collect()
}
