mod commands;
mod error;
mod wav;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Binary neural network sound event detection.
#[derive(Debug, Parser)]
#[command(name = "binsed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the quantized Mel feature patch of a WAV file.
    Extract(ExtractArgs),
    /// Classify a WAV file or a stored feature patch.
    Infer(InferArgs),
    /// Time every layer and the end-to-end pipeline.
    Bench(BenchArgs),
    /// Report memory requirements against the on-chip budget.
    Footprint(FootprintArgs),
    /// Quantize a floating-point model stored as JSON.
    Quantize(QuantizeArgs),
    /// Generate a deterministic random model on the reference topology.
    GenModel(GenModelArgs),
}

#[derive(Debug, Args)]
struct ThreadArgs {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
}

impl ThreadArgs {
    fn count(&self) -> usize {
        self.threads
            .map(|n| n as usize)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long, value_name = "PATH")]
    wav: PathBuf,
    /// Feature file to write, or a directory with --all-chunks.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Model whose frontend configuration to use instead of the default.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Cut the clip into consecutive patches instead of one centred patch.
    #[arg(long)]
    all_chunks: bool,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "features",
        conflicts_with = "features"
    )]
    wav: Option<PathBuf>,
    /// Previously extracted feature file.
    #[arg(long, value_name = "PATH")]
    features: Option<PathBuf>,
    /// Run the column-tiled executor.
    #[arg(long, overrides_with = "monolithic")]
    tiled: bool,
    /// Run the whole-image executor (default).
    #[arg(long, overrides_with = "tiled")]
    monolithic: bool,
    #[arg(long, value_name = "N", default_value_t = 4)]
    tiles: usize,
    /// Classify every patch of the clip instead of the centred one.
    #[arg(long)]
    all_chunks: bool,
    #[arg(long)]
    json: bool,
    /// Cross-check the result against the reference oracle.
    #[arg(long, hide = true)]
    oracle: bool,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Model to time; a random model from --seed otherwise.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Audio to time; synthetic audio from --seed otherwise.
    #[arg(long, value_name = "PATH")]
    wav: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Timed repetitions per measurement; the median is reported.
    #[arg(long, value_name = "N", default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,
    #[arg(long, value_enum, default_value_t = PopcountArg::Native)]
    popcount: PopcountArg,
    /// Skip the packed-versus-naive and popcount kernel comparison.
    #[arg(long)]
    no_compare: bool,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PopcountArg {
    Native,
    Portable,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Binary,
    Fixed16,
}

#[derive(Debug, Args)]
struct FootprintArgs {
    /// Model whose topology to account; the reference network otherwise.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    #[arg(long, value_name = "N", default_value_t = 4)]
    tiles: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Binary)]
    precision: PrecisionArg,
    #[arg(long, value_name = "BYTES", default_value_t = 524_288)]
    l2_bytes: usize,
    #[arg(long, value_name = "BYTES", default_value_t = 65_536)]
    l1_bytes: usize,
    /// Exit with status 5 when the total exceeds the L2 budget.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Floating-point model in JSON.
    #[arg(long = "float", value_name = "PATH")]
    float_model: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Storage width of the fixed-point first-layer output and final weights.
    #[arg(long, value_name = "BITS", default_value_t = 16, value_parser = parse_qformat_bits)]
    qformat_bits: u32,
    /// Exit with status 5 when the quantized model exceeds the memory budget.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct GenModelArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Also write the unquantized model as JSON.
    #[arg(long, value_name = "PATH")]
    float_out: Option<PathBuf>,
    #[arg(long, value_name = "BITS", default_value_t = 16, value_parser = parse_qformat_bits)]
    qformat_bits: u32,
    #[arg(long)]
    json: bool,
}

fn parse_qformat_bits(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(b @ (16 | 32)) => Ok(b),
        _ => Err(format!("expected 16 or 32, got {s}")),
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("BINSED_LOG", "warn");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Infer(a) => commands::infer(a),
        Command::Bench(a) => commands::bench(a),
        Command::Footprint(a) => commands::footprint(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::GenModel(a) => commands::gen_model(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("binsed: {e}");
            e.exit()
        }
    }
}
