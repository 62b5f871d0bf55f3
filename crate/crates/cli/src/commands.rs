use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use binsed::accounting::{footprint as account, Footprint, MemoryBudget, Precision};
use binsed::bench::{synthetic_audio, thread_pool, BenchOptions};
use binsed::executor::{run_monolithic, run_tiled, ExecOptions, Inference, TilePlan};
use binsed::frontend::{chunk_ranges, mel_spectrogram, pcm_to_float, ChunkMode, FrontendConfig};
use binsed::kernels::PopcountImpl;
use binsed::model::{
    gen_random_float_model, load_features, load_model, quantize as quantize_model, save_features, save_model,
    FloatModel, QuantizeOptions,
};
use binsed::network::{LayerParams, Model, NetworkSpec};
use binsed::oracle::oracle_network;
use binsed::tensors::{Bitwidth, FixedTensor};
use log::{debug, info, warn};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::wav::read_pcm16;
use crate::{BenchArgs, ExtractArgs, FootprintArgs, GenModelArgs, InferArgs, PopcountArg, PrecisionArg, QuantizeArgs};

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    debug!("wrote {} bytes to {}", bytes.len(), path.display());
    Ok(())
}

fn load_model_file(path: &Path) -> CliResult<Model> {
    let bytes = read_file(path)?;
    load_model(&bytes).map_err(|source| CliError::CorruptModel {
        path: path.to_path_buf(),
        source,
    })
}

fn print_json(v: &Value) {
    println!("{v}");
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// One network input cut from a clip.
struct Patch {
    chunk: usize,
    /// Sample range of the clip, absent for stored feature files.
    samples: Option<Range<usize>>,
    padded: bool,
    features: FixedTensor,
}

fn wav_patches(wav: &Path, cfg: &FrontendConfig, all_chunks: bool) -> CliResult<(Vec<Patch>, Duration)> {
    let pcm = read_pcm16(wav, cfg.sample_rate)?;
    let audio = pcm_to_float(&pcm);
    let patch = cfg.patch_samples();
    let mode = if all_chunks {
        ChunkMode::All
    } else {
        ChunkMode::Centered
    };
    let start = Instant::now();
    let mut out = Vec::new();
    for (chunk, r) in chunk_ranges(audio.len(), patch, mode).into_iter().enumerate() {
        let features = mel_spectrogram(&audio[r.clone()], cfg)?;
        out.push(Patch {
            chunk,
            padded: r.len() < patch,
            samples: Some(r),
            features,
        });
    }
    info!("{}: {} samples, {} patch(es)", wav.display(), audio.len(), out.len());
    Ok((out, start.elapsed()))
}

fn samples_json(p: &Patch) -> Value {
    match &p.samples {
        Some(r) => json!([r.start, r.end]),
        None => Value::Null,
    }
}

pub(crate) fn extract(a: ExtractArgs) -> CliResult<()> {
    let cfg = match &a.model {
        Some(m) => load_model_file(m)?.frontend,
        None => FrontendConfig::default(),
    };
    let pool = thread_pool(a.threads.count())?;
    let (patches, _) = pool.install(|| wav_patches(&a.wav, &cfg, a.all_chunks))?;
    if a.all_chunks {
        std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    }
    for p in &patches {
        let path: PathBuf = if a.all_chunks {
            a.out.join(format!("chunk-{:04}.bsef", p.chunk))
        } else {
            a.out.clone()
        };
        write_file(&path, &save_features(&p.features, &cfg))?;
        let (h, w, c) = p.features.shape();
        if a.json {
            print_json(&json!({
                "record": "features",
                "chunk": p.chunk,
                "samples": samples_json(p),
                "padded": p.padded,
                "shape": [h, w, c],
                "qformat": p.features.qformat(),
                "path": path.display().to_string(),
            }));
        } else {
            let r = p.samples.clone().unwrap_or_default();
            println!(
                "chunk {}: samples {}..{}{} -> {} ({h}x{w}x{c}, Q{})",
                p.chunk,
                r.start,
                r.end,
                if p.padded { " (zero-padded)" } else { "" },
                path.display(),
                p.features.qformat()
            );
        }
    }
    Ok(())
}

fn run_patch(model: &Model, x: &FixedTensor, plan: Option<&TilePlan>) -> CliResult<Inference> {
    let opts = ExecOptions::default();
    Ok(match plan {
        Some(plan) => run_tiled(x, model, plan, opts)?.inference,
        None => run_monolithic(x, model, opts)?,
    })
}

pub(crate) fn infer(a: InferArgs) -> CliResult<()> {
    let model = load_model_file(&a.model)?;
    let pool = thread_pool(a.threads.count())?;
    let (patches, frontend_time) = match (&a.features, &a.wav) {
        (Some(path), _) => {
            let (features, cfg) = load_features(&read_file(path)?)
                .map_err(|e| CliError::InputFormat(format!("{}: {e}", path.display())))?;
            if cfg != model.frontend {
                warn!(
                    "{} was extracted with a different frontend configuration than the model's",
                    path.display()
                );
            }
            let patch = Patch {
                chunk: 0,
                samples: None,
                padded: false,
                features,
            };
            (vec![patch], Duration::ZERO)
        }
        (None, Some(wav)) => pool.install(|| wav_patches(wav, &model.frontend, a.all_chunks))?,
        (None, None) => unreachable!("clap requires --wav or --features"),
    };
    let plan = if a.tiled {
        Some(TilePlan::new(&model.spec, a.tiles, model.spec.required_halo())?)
    } else {
        None
    };
    let executor = if a.tiled { "tiled" } else { "monolithic" };
    let scale = model.score_scale();
    let mut network_time = Duration::ZERO;
    for p in &patches {
        let start = Instant::now();
        let inf = pool.install(|| run_patch(&model, &p.features, plan.as_ref()))?;
        network_time += start.elapsed();
        if a.oracle {
            let reference = oracle_network(&model, &p.features);
            if reference != inf.scores {
                return Err(CliError::Other(format!(
                    "chunk {}: executor disagrees with the oracle",
                    p.chunk
                )));
            }
            info!("chunk {}: oracle agrees", p.chunk);
        }
        let scores: Vec<f64> = inf.scores.means().iter().map(|m| m * scale).collect();
        if a.json {
            print_json(&json!({
                "record": "inference",
                "chunk": p.chunk,
                "samples": samples_json(p),
                "executor": executor,
                "class": inf.class,
                "scores": scores,
                "sums": inf.scores.sums,
                "count": inf.scores.count,
            }));
        } else {
            let mut s = format!("chunk {}: class {}", p.chunk, inf.class);
            if let Some(r) = &p.samples {
                write!(s, " (samples {}..{})", r.start, r.end)?;
            }
            writeln!(s)?;
            for (k, v) in scores.iter().enumerate() {
                let mark = if k == inf.class { " *" } else { "" };
                writeln!(s, "  {k:>3} {v:>14.6}{mark}")?;
            }
            print!("{s}");
        }
    }
    if a.json {
        eprintln!(
            "{}",
            json!({"record": "timing", "frontend_ms": ms(frontend_time), "network_ms": ms(network_time)})
        );
    } else {
        eprintln!(
            "wall time: frontend {:.2} ms, network {:.2} ms",
            ms(frontend_time),
            ms(network_time)
        );
    }
    Ok(())
}

pub(crate) fn bench(a: BenchArgs) -> CliResult<()> {
    let model = match &a.model {
        Some(p) => load_model_file(p)?,
        None => binsed::model::gen_random_model(a.seed)?,
    };
    let audio = match &a.wav {
        Some(wav) => {
            let pcm = read_pcm16(wav, model.frontend.sample_rate)?;
            let r = chunk_ranges(pcm.len(), model.frontend.patch_samples(), ChunkMode::Centered).remove(0);
            pcm_to_float(&pcm[r])
        }
        None => synthetic_audio(model.frontend.patch_samples(), a.seed),
    };
    let opts = BenchOptions {
        repetitions: a.reps as usize,
        threads: a.threads.count(),
        popcount: match a.popcount {
            PopcountArg::Native => PopcountImpl::Native,
            PopcountArg::Portable => PopcountImpl::Portable,
        },
        compare_kernels: !a.no_compare,
        ..BenchOptions::default()
    };
    let report = binsed::bench::bench(&model, &audio, opts)?;
    if a.json {
        print!("{}", report.to_json_lines());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn kb(bytes: usize) -> String {
    format!("{:.1} kB", bytes as f64 / 1000.0)
}

fn footprint_table(f: &Footprint) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>10} {:>10} {:>10} {:>12}",
        "layer", "weights", "fold", "bias", "output map"
    );
    for l in &f.layers {
        let _ = writeln!(
            s,
            "{:<14} {:>10} {:>10} {:>10} {:>12}",
            l.layer, l.weight_bytes, l.fold_bytes, l.bias_bytes, l.output_bytes
        );
    }
    let _ = writeln!(s);
    let rows = [
        ("Weights", f.weight_bytes),
        ("Folds", f.fold_bytes),
        ("Biases", f.bias_bytes),
        ("Parameters", f.parameter_bytes),
        ("Audio", f.audio_bytes),
        ("Features", f.feature_bytes),
        ("Activations", f.activation_peak_bytes),
        ("Total", f.total_bytes),
        ("Tile peak", f.tile_peak_bytes),
    ];
    for (name, bytes) in rows {
        let _ = writeln!(s, "{name:<14} {:>10} B {:>12}", bytes, kb(bytes));
    }
    let verdict = |ok: bool| if ok { "fits" } else { "EXCEEDS" };
    let _ = writeln!(
        s,
        "L2 budget {} KiB ({} B): total {}",
        f.budget.l2_bytes / 1024,
        f.budget.l2_bytes,
        verdict(f.fits_l2)
    );
    let _ = writeln!(
        s,
        "L1 budget {} KiB ({} B): tile peak {}",
        f.budget.l1_bytes / 1024,
        f.budget.l1_bytes,
        verdict(f.fits_l1)
    );
    s
}

fn footprint_json(f: &Footprint) -> String {
    let mut s = String::new();
    for l in &f.layers {
        let mut v = serde_json::to_value(l).expect("layer footprint serializes");
        v["record"] = json!("layer");
        let _ = writeln!(s, "{v}");
    }
    let mut v = serde_json::to_value(f).expect("footprint serializes");
    let obj = v.as_object_mut().expect("footprint is an object");
    obj.remove("layers");
    obj.insert("record".into(), json!("summary"));
    obj.insert("fits".into(), json!(f.fits()));
    let _ = writeln!(s, "{v}");
    s
}

fn model_footprint(
    spec: &NetworkSpec,
    tiles: usize,
    budget: MemoryBudget,
    precision: Precision,
) -> CliResult<Footprint> {
    let plan = TilePlan::new(spec, tiles, spec.required_halo())?;
    Ok(account(spec, budget, &plan, precision))
}

pub(crate) fn footprint(a: FootprintArgs) -> CliResult<()> {
    let spec = match &a.model {
        Some(p) => load_model_file(p)?.spec,
        None => NetworkSpec::reference(),
    };
    let budget = MemoryBudget {
        l1_bytes: a.l1_bytes,
        l2_bytes: a.l2_bytes,
        ..MemoryBudget::default()
    };
    let precision = match a.precision {
        PrecisionArg::Binary => Precision::Binary,
        PrecisionArg::Fixed16 => Precision::Fixed16,
    };
    let f = model_footprint(&spec, a.tiles, budget, precision)?;
    if a.json {
        print!("{}", footprint_json(&f));
    } else {
        print!("{}", footprint_table(&f));
    }
    if a.strict && !f.fits() {
        return Err(CliError::Budget(format!(
            "total {} exceeds the L2 budget of {} B",
            kb(f.total_bytes),
            f.budget.l2_bytes
        )));
    }
    Ok(())
}

fn options_for_bits(bits: u32) -> QuantizeOptions {
    let bw = Bitwidth::from_bits(bits).expect("clap restricts the width to 16 or 32");
    QuantizeOptions {
        first_output_bitwidth: bw,
        final_weight_bitwidth: bw,
        ..QuantizeOptions::default()
    }
}

/// Writes `model` and prints its per-layer quantization summary.
fn emit_model(model: &Model, out: &Path, json_out: bool) -> CliResult<Footprint> {
    model.validate()?;
    let bytes = save_model(model);
    write_file(out, &bytes)?;
    let f = model_footprint(&model.spec, 4, MemoryBudget::default(), Precision::Binary)?;
    for (i, p) in model.layers.iter().enumerate() {
        let name = model.spec.layer_name(i);
        let (wq, shift) = match p {
            LayerParams::Fixed { conv, .. } | LayerParams::Final { conv } => {
                (Some(conv.weight_qformat), Some(conv.output_shift))
            }
            LayerParams::Binary { .. } => (None, None),
        };
        let folded = p.fold().map_or(0, |f| f.channels());
        if json_out {
            print_json(&json!({
                "record": "layer",
                "layer": name,
                "kind": format!("{:?}", p.kind()),
                "weight_qformat": wq,
                "output_shift": shift,
                "folded_channels": folded,
            }));
        } else {
            let q = wq.map_or("-".to_string(), |q| format!("Q{q}"));
            let sh = shift.map_or("-".to_string(), |s| s.to_string());
            println!(
                "{name:<14} {:<12} weights {q:<5} shift {sh:<3} folded {folded}",
                format!("{:?}", p.kind())
            );
        }
    }
    if json_out {
        print_json(&json!({
            "record": "model",
            "path": out.display().to_string(),
            "file_bytes": bytes.len(),
            "parameter_bytes": f.parameter_bytes,
            "total_bytes": f.total_bytes,
            "fits": f.fits(),
        }));
    } else {
        println!(
            "wrote {} ({} B); parameters {}, total {} ({})",
            out.display(),
            bytes.len(),
            kb(f.parameter_bytes),
            kb(f.total_bytes),
            if f.fits() {
                "fits the L2 budget"
            } else {
                "exceeds the L2 budget"
            }
        );
    }
    Ok(f)
}

pub(crate) fn quantize(a: QuantizeArgs) -> CliResult<()> {
    let text = String::from_utf8(read_file(&a.float_model)?)
        .map_err(|_| CliError::InputFormat(format!("{}: not UTF-8 JSON", a.float_model.display())))?;
    let float =
        FloatModel::from_json(&text).map_err(|e| CliError::InputFormat(format!("{}: {e}", a.float_model.display())))?;
    let model = quantize_model(&float, &options_for_bits(a.qformat_bits))?;
    let f = emit_model(&model, &a.out, a.json)?;
    if a.strict && !f.fits() {
        return Err(CliError::Budget(format!("quantized model needs {}", kb(f.total_bytes))));
    }
    Ok(())
}

pub(crate) fn gen_model(a: GenModelArgs) -> CliResult<()> {
    let float = gen_random_float_model(a.seed, &NetworkSpec::reference())?;
    if let Some(path) = &a.float_out {
        write_file(path, float.to_json().as_bytes())?;
    }
    let model = quantize_model(&float, &options_for_bits(a.qformat_bits))?;
    emit_model(&model, &a.out, a.json)?;
    Ok(())
}
