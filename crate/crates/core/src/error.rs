use thiserror::Error;

/// Errors produced anywhere in the inference pipeline.
///
/// Variants are grouped by class so the CLI can map them onto its exit
/// codes: input format, corrupt model, shape mismatch.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("element {index} is {value}, expected -1 or +1")]
    NotSign { index: usize, value: i64 },

    #[error("padding bits set in word {word} beyond channel count {channels}")]
    PaddingBitsSet { word: usize, channels: usize },

    #[error("buffer length {actual} does not match shape (expected {expected})")]
    BufferLength { expected: usize, actual: usize },

    #[error("value {value} at index {index} does not fit in {bits} signed bits")]
    OutOfRange { index: usize, value: i64, bits: u32 },

    #[error("audio has {samples} samples, at most {max} allowed per patch")]
    AudioTooLong { samples: usize, max: usize },

    #[error("invalid audio: {0}")]
    AudioFormat(String),

    #[error("shape mismatch in {layer}: {detail}")]
    ShapeMismatch { layer: String, detail: String },

    #[error("channel mismatch: input has {input}, weights expect {weights}")]
    ChannelMismatch { input: usize, weights: usize },

    #[error("unsupported stride {0}")]
    Stride(usize),

    #[error("accumulator may overflow 32 bits in {layer}: worst case {worst_case}")]
    AccumulatorOverflow { layer: String, worst_case: u128 },

    #[error("channel {channel}: batch-norm scale is zero")]
    ZeroGamma { channel: usize },

    #[error("channel {channel}: batch-norm std must be positive, got {sigma}")]
    NonPositiveSigma { channel: usize, sigma: String },

    #[error("channel {channel}: folded threshold disagrees with batch-norm sign at x = {x}")]
    FoldMismatch { channel: usize, x: i64 },

    #[error("weight {index} is NaN")]
    NanWeight { index: usize },

    #[error("tile halo {halo} is smaller than the receptive field requires ({required})")]
    HaloTooSmall { halo: usize, required: usize },

    #[error("invalid tile plan: {0}")]
    TilePlan(String),

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("malformed model: {0}")]
    Malformed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for errors that indicate a damaged or incompatible model file.
    pub fn is_corrupt_model(&self) -> bool {
        matches!(
            self,
            Error::BadMagic(_)
                | Error::VersionMismatch { .. }
                | Error::Checksum { .. }
                | Error::Truncated { .. }
                | Error::TrailingBytes(_)
                | Error::Malformed(_)
        )
    }

    pub fn is_shape_mismatch(&self) -> bool {
        matches!(self, Error::ShapeMismatch { .. } | Error::ChannelMismatch { .. })
    }

    pub fn is_input_format(&self) -> bool {
        matches!(
            self,
            Error::AudioFormat(_) | Error::AudioTooLong { .. } | Error::NotSign { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
