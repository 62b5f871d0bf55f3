//! Little-endian binary containers for quantized models and feature patches.
//!
//! Both share a 12-byte header (magic, version, reserved, payload length),
//! the payload, and a CRC-32 of the payload. `docs/formats.md` lists every
//! field.

use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::kernels::{BnFold, FixedConvParams};
use crate::network::{LayerKind, LayerParams, LayerShape, Model, NetworkSpec};
use crate::tensors::{words_for, Bitwidth, FixedTensor, PackedBinaryWeights};

pub const MODEL_MAGIC: [u8; 4] = *b"BSED";
pub const FEATURE_MAGIC: [u8; 4] = *b"BSEF";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 12;
const TRAILER_LEN: usize = 4;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }
    fn values(&mut self, values: &[i32], bw: Bitwidth) {
        for &v in values {
            match bw {
                Bitwidth::B16 => self.0.extend_from_slice(&(v as i16).to_le_bytes()),
                Bitwidth::B32 => self.i32(v),
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Reader { buf, pos: 0, base }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.base + self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    /// `n` counted items of `size` bytes each, refusing counts larger than
    /// what is left so corrupt sizes cannot trigger huge allocations.
    fn check_count(&self, n: usize, size: usize) -> Result<()> {
        let left = self.buf.len() - self.pos;
        if n.checked_mul(size).is_none_or(|b| b > left) {
            return Err(Error::Truncated {
                offset: self.base + self.pos,
                needed: n.saturating_mul(size),
            });
        }
        Ok(())
    }
    fn i32s(&mut self, n: usize) -> Result<Vec<i32>> {
        self.check_count(n, 4)?;
        (0..n).map(|_| self.i32()).collect()
    }
    fn values(&mut self, n: usize, bw: Bitwidth) -> Result<Vec<i32>> {
        self.check_count(n, bw.bytes())?;
        match bw {
            Bitwidth::B16 => (0..n)
                .map(|_| Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()) as i32))
                .collect(),
            Bitwidth::B32 => self.i32s(n),
        }
    }
    fn bitwidth(&mut self) -> Result<Bitwidth> {
        let b = self.u8()?;
        Bitwidth::from_bits(b as u32).ok_or_else(|| Error::Malformed(format!("bitwidth {b}")))
    }
}

fn wrap(magic: [u8; 4], payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    let crc = crc32fast::hash(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks header, length and checksum and returns the payload.
fn unwrap(magic: [u8; 4], bytes: &[u8]) -> Result<&[u8]> {
    let mut r = Reader::new(bytes, 0);
    let found: [u8; 4] = r.take(4)?.try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic(found));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let _reserved = r.u16()?;
    let len = r.len()?;
    let total = HEADER_LEN + len + TRAILER_LEN;
    if bytes.len() < total {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: total - bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(Error::TrailingBytes(bytes.len() - total));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    let stored = u32::from_le_bytes(bytes[total - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(payload)
}

/// Errors raised while decoding a payload that passed its checksum mean
/// the writer produced something inconsistent.
fn malformed(e: Error) -> Error {
    match e {
        Error::Malformed(_) => e,
        other => Error::Malformed(other.to_string()),
    }
}

fn finish(r: &Reader) -> Result<()> {
    if r.pos != r.buf.len() {
        return Err(Error::Malformed(format!(
            "{} unused payload bytes",
            r.buf.len() - r.pos
        )));
    }
    Ok(())
}

fn write_frontend(w: &mut Writer, c: &FrontendConfig) {
    w.u32(c.sample_rate);
    w.len(c.window);
    w.len(c.hop);
    w.len(c.fft_size);
    w.len(c.mel_bins);
    w.len(c.frames);
    w.f64(c.fmin);
    w.f64(c.fmax);
    w.f64(c.log_floor);
    w.u8(c.log_compress as u8);
    w.u8(c.output_qformat);
}

fn read_frontend(r: &mut Reader) -> Result<FrontendConfig> {
    let c = FrontendConfig {
        sample_rate: r.u32()?,
        window: r.len()?,
        hop: r.len()?,
        fft_size: r.len()?,
        mel_bins: r.len()?,
        frames: r.len()?,
        fmin: r.f64()?,
        fmax: r.f64()?,
        log_floor: r.f64()?,
        log_compress: match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Malformed(format!("log flag {b}"))),
        },
        output_qformat: r.u8()?,
    };
    c.validate()?;
    Ok(c)
}

fn write_conv(w: &mut Writer, c: &FixedConvParams) {
    w.u8(c.weight_qformat);
    w.u8(c.weight_bitwidth.bits() as u8);
    w.u8(c.output_shift);
    w.u8(c.output_bitwidth.bits() as u8);
    w.values(&c.weights, c.weight_bitwidth);
    for &b in &c.bias {
        w.i32(b);
    }
}

fn read_conv(r: &mut Reader, s: &LayerShape) -> Result<FixedConvParams> {
    let weight_qformat = r.u8()?;
    let weight_bitwidth = r.bitwidth()?;
    let output_shift = r.u8()?;
    let output_bitwidth = r.bitwidth()?;
    let weights = r.values(s.weight_count(), weight_bitwidth)?;
    let bias = r.i32s(s.out_channels)?;
    let c = FixedConvParams {
        out_channels: s.out_channels,
        in_channels: s.in_channels,
        ky: s.ky,
        kx: s.kx,
        weights,
        weight_qformat,
        weight_bitwidth,
        bias,
        output_shift,
        output_bitwidth,
    };
    c.validate()?;
    Ok(c)
}

fn write_fold(w: &mut Writer, f: &BnFold) {
    let mut bits = vec![0u8; f.channels().div_ceil(8)];
    for (k, &p) in f.polarity().iter().enumerate() {
        if p > 0 {
            bits[k / 8] |= 1 << (k % 8);
        }
    }
    w.0.extend_from_slice(&bits);
    for &t in f.threshold() {
        w.i32(t);
    }
}

fn read_fold(r: &mut Reader, channels: usize) -> Result<BnFold> {
    let bits = r.take(channels.div_ceil(8))?;
    if !channels.is_multiple_of(8) && bits[channels / 8] >> (channels % 8) != 0 {
        return Err(Error::Malformed("polarity padding bits set".into()));
    }
    let polarity = (0..channels)
        .map(|k| if bits[k / 8] >> (k % 8) & 1 == 1 { 1 } else { -1 })
        .collect();
    BnFold::new(polarity, r.i32s(channels)?)
}

pub fn save_model(model: &Model) -> Vec<u8> {
    let mut w = Writer::default();
    write_frontend(&mut w, &model.frontend);
    w.u8(model.input_qformat);
    let spec = &model.spec;
    w.len(spec.input_height);
    w.len(spec.input_width);
    w.len(spec.input_channels);
    w.len(spec.classes);
    w.len(spec.layers.len());
    for l in &spec.layers {
        w.u8(l.kind.code());
        w.u8(l.ky as u8);
        w.u8(l.kx as u8);
        w.u8(l.stride as u8);
        w.len(l.in_channels);
        w.len(l.out_channels);
    }
    for p in &model.layers {
        match p {
            LayerParams::Fixed { conv, fold } => {
                write_conv(&mut w, conv);
                write_fold(&mut w, fold);
            }
            LayerParams::Binary { weights, fold } => {
                for &word in weights.words() {
                    w.u32(word);
                }
                write_fold(&mut w, fold);
            }
            LayerParams::Final { conv } => write_conv(&mut w, conv),
        }
    }
    wrap(MODEL_MAGIC, w.0)
}

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    let payload = unwrap(MODEL_MAGIC, bytes)?;
    parse_model(payload).map_err(malformed)
}

fn parse_model(payload: &[u8]) -> Result<Model> {
    let mut r = Reader::new(payload, HEADER_LEN);
    let frontend = read_frontend(&mut r)?;
    let input_qformat = r.u8()?;
    let input_height = r.len()?;
    let input_width = r.len()?;
    let input_channels = r.len()?;
    let classes = r.len()?;
    let n = r.len()?;
    r.check_count(n, 12)?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| Error::Malformed(format!("layer kind {code}")))?;
        layers.push(LayerShape {
            kind,
            ky: r.u8()? as usize,
            kx: r.u8()? as usize,
            stride: r.u8()? as usize,
            in_channels: r.len()?,
            out_channels: r.len()?,
        });
    }
    let spec = NetworkSpec {
        input_height,
        input_width,
        input_channels,
        classes,
        layers,
    };
    spec.validate()?;
    let mut params = Vec::with_capacity(n);
    for s in &spec.layers {
        params.push(match s.kind {
            LayerKind::FixedConv => LayerParams::Fixed {
                conv: read_conv(&mut r, s)?,
                fold: read_fold(&mut r, s.out_channels)?,
            },
            LayerKind::BinaryConv => {
                let count = s.out_channels * s.ky * s.kx * words_for(s.in_channels);
                r.check_count(count, 4)?;
                let words = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                LayerParams::Binary {
                    weights: PackedBinaryWeights::from_words(s.out_channels, s.in_channels, s.ky, s.kx, words)?,
                    fold: read_fold(&mut r, s.out_channels)?,
                }
            }
            LayerKind::FinalConv => LayerParams::Final {
                conv: read_conv(&mut r, s)?,
            },
        });
    }
    finish(&r)?;
    let model = Model {
        spec,
        frontend,
        input_qformat,
        layers: params,
    };
    model.validate()?;
    Ok(model)
}

/// Serializes a feature patch together with the frontend settings that
/// produced it.
pub fn save_features(features: &FixedTensor, frontend: &FrontendConfig) -> Vec<u8> {
    let mut w = Writer::default();
    write_frontend(&mut w, frontend);
    let (h, wd, c) = features.shape();
    w.len(h);
    w.len(wd);
    w.len(c);
    w.u8(features.qformat());
    w.u8(features.bitwidth().bits() as u8);
    w.values(features.values(), features.bitwidth());
    wrap(FEATURE_MAGIC, w.0)
}

pub fn load_features(bytes: &[u8]) -> Result<(FixedTensor, FrontendConfig)> {
    let payload = unwrap(FEATURE_MAGIC, bytes)?;
    let parse = || -> Result<(FixedTensor, FrontendConfig)> {
        let mut r = Reader::new(payload, HEADER_LEN);
        let cfg = read_frontend(&mut r)?;
        let (h, w, c) = (r.len()?, r.len()?, r.len()?);
        let q = r.u8()?;
        let bw = r.bitwidth()?;
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Malformed("feature dimensions overflow".into()))?;
        let values = r.values(n, bw)?;
        finish(&r)?;
        Ok((FixedTensor::new(h, w, c, values, q, bw)?, cfg))
    };
    parse().map_err(malformed)
}
