//! RIFF/WAVE input restricted to 16-bit mono PCM at the frontend's rate.

use std::path::Path;

use hound::{SampleFormat, WavReader};

use crate::error::{CliError, CliResult};

pub const REQUIRED_CHANNELS: u16 = 1;
pub const REQUIRED_BITS: u16 = 16;

/// Reads every sample of `path`, rejecting any format other than
/// 16-bit signed mono PCM at `sample_rate`. No resampling is attempted.
pub fn read_pcm16(path: &Path, sample_rate: u32) -> CliResult<Vec<i16>> {
    let bad = |msg: String| CliError::InputFormat(format!("{}: {msg}", path.display()));
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => CliError::io(path, io),
        other => bad(format!("not a readable WAV file ({other})")),
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(bad(
            "floating-point samples are not supported, expected 16-bit PCM".into()
        ));
    }
    if spec.bits_per_sample != REQUIRED_BITS {
        return Err(bad(format!(
            "bit depth {} unsupported, expected {REQUIRED_BITS}",
            spec.bits_per_sample
        )));
    }
    if spec.channels != REQUIRED_CHANNELS {
        return Err(bad(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != sample_rate {
        return Err(bad(format!(
            "sample rate {} Hz, expected {sample_rate} Hz",
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(format!("unreadable sample data ({e})")))
}
