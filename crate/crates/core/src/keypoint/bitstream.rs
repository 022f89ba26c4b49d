//! `VCMF` feature bitstream.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "VCMF" | version u8 | backend u8 | fps×100 u16 | N u32 | L u16
//! | height u16 | width u16 | pos_step×16 u16 | cov_step×16 u16
//! | payload_len u64 | payload
//! ```
//!
//! The uncompressed payload is a run of zigzag varints in
//! (frame, point, field) order, fields `(qx, qy, ic_xx, ic_xy, ic_yx, ic_yy)`.

use std::io::{Read, Write};

use lzma_rust2::{LzmaOptions, LzmaReader, LzmaWriter};

use super::{
    check_step, dequantize_keypoint, quantize_keypoint, ClipFeatureStream, FrameKeypoints,
    QuantizedKeypoint, DEFAULT_COV_STEP, DEFAULT_POS_STEP,
};
use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};

pub const FEATURE_MAGIC: &[u8; 4] = b"VCMF";
pub const FEATURE_VERSION: u8 = 1;
pub const FEATURE_HEADER_LEN: usize = 30;

const FIELDS_PER_POINT: usize = 6;
const LZMA_PRESET: u32 = 6;
const LZMA_DICT_MAX: u32 = 1 << 22;
const DECODE_MEM_LIMIT_KB: u32 = 64 * 1024;

/// Lossless backend applied to the serialized varints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompressionBackend {
    /// Uncompressed varints; for debugging and keypoint sidecar files.
    Raw,
    #[default]
    Lzma,
}

impl CompressionBackend {
    pub fn id(self) -> u8 {
        match self {
            CompressionBackend::Raw => 0,
            CompressionBackend::Lzma => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(CompressionBackend::Raw),
            1 => Some(CompressionBackend::Lzma),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CompressionBackend::Raw => "raw",
            CompressionBackend::Lzma => "lzma",
        }
    }

    pub(crate) fn compress(self, raw: &[u8]) -> Result<Vec<u8>> {
        match self {
            CompressionBackend::Raw => Ok(raw.to_vec()),
            CompressionBackend::Lzma => {
                let fail = |e: &dyn std::fmt::Display| Error::Encode {
                    backend: self.name().into(),
                    diagnostic: e.to_string(),
                };
                let mut opts = LzmaOptions::with_preset(LZMA_PRESET);
                opts.dict_size = (raw.len() as u32)
                    .max(lzma_rust2::DICT_SIZE_MIN)
                    .next_power_of_two()
                    .min(LZMA_DICT_MAX);
                let mut w = LzmaWriter::new_use_header(Vec::new(), &opts, Some(raw.len() as u64))
                    .map_err(|e| fail(&e))?;
                w.write_all(raw).map_err(|e| fail(&e))?;
                w.finish().map_err(|e| fail(&e))
            }
        }
    }

    pub(crate) fn decompress(self, payload: &[u8], offset: usize) -> Result<Vec<u8>> {
        match self {
            CompressionBackend::Raw => Ok(payload.to_vec()),
            CompressionBackend::Lzma => {
                let mut r = LzmaReader::new_mem_limit(payload, DECODE_MEM_LIMIT_KB, None)
                    .map_err(|e| Error::corrupt(offset, format!("lzma header: {e}")))?;
                let mut out = Vec::new();
                r.read_to_end(&mut out)
                    .map_err(|e| Error::corrupt(offset, format!("lzma payload: {e}")))?;
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureCodecConfig {
    pub pos_step: f64,
    pub cov_step: f64,
    pub backend: CompressionBackend,
}

impl Default for FeatureCodecConfig {
    fn default() -> Self {
        Self {
            pos_step: DEFAULT_POS_STEP,
            cov_step: DEFAULT_COV_STEP,
            backend: CompressionBackend::Lzma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub version: u8,
    pub backend: CompressionBackend,
    pub fps_centi: u16,
    pub frames: u32,
    pub points: u16,
    pub height: u16,
    pub width: u16,
    pub pos_step_x16: u16,
    pub cov_step_x16: u16,
    pub payload_len: u64,
}

impl FeatureHeader {
    pub fn fps(&self) -> f64 {
        f64::from(self.fps_centi) / 100.0
    }

    pub fn pos_step(&self) -> f64 {
        f64::from(self.pos_step_x16) / 16.0
    }

    pub fn cov_step(&self) -> f64 {
        f64::from(self.cov_step_x16) / 16.0
    }

    fn write(&self, w: &mut ByteWriter) {
        w.bytes(FEATURE_MAGIC);
        w.u8(self.version);
        w.u8(self.backend.id());
        w.u16(self.fps_centi);
        w.u32(self.frames);
        w.u16(self.points);
        w.u16(self.height);
        w.u16(self.width);
        w.u16(self.pos_step_x16);
        w.u16(self.cov_step_x16);
        w.u64(self.payload_len);
    }

    fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let magic = r.array::<4>()?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::corrupt(0, "bad feature-layer magic"));
        }
        let version = r.u8()?;
        if version != FEATURE_VERSION {
            return Err(Error::corrupt(
                4,
                format!("unsupported feature-layer version {version}"),
            ));
        }
        let backend_id = r.u8()?;
        let backend = CompressionBackend::from_id(backend_id)
            .ok_or_else(|| Error::corrupt(5, format!("unknown backend id {backend_id}")))?;
        let header = Self {
            version,
            backend,
            fps_centi: r.u16()?,
            frames: r.u32()?,
            points: r.u16()?,
            height: r.u16()?,
            width: r.u16()?,
            pos_step_x16: r.u16()?,
            cov_step_x16: r.u16()?,
            payload_len: r.u64()?,
        };
        let zero_field = [
            (header.fps_centi == 0, 6, "fps"),
            (header.frames == 0, 8, "frame count"),
            (header.height == 0, 14, "height"),
            (header.width == 0, 16, "width"),
            (header.pos_step_x16 == 0, 18, "position step"),
            (header.cov_step_x16 == 0, 20, "covariance step"),
        ];
        if let Some((_, off, what)) = zero_field.iter().find(|f| f.0) {
            return Err(Error::corrupt(*off, format!("{what} must be nonzero")));
        }
        Ok(header)
    }
}

/// Header plus compressed payload of the feature layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureBitstream {
    pub header: FeatureHeader,
    pub payload: Vec<u8>,
}

impl FeatureBitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(FEATURE_HEADER_LEN + self.payload.len());
        self.header.write(&mut w);
        w.bytes(&self.payload);
        w.into_inner()
    }

    /// Parses header and payload framing; the payload is not decompressed.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let header = FeatureHeader::read(&mut r)?;
        let len = usize::try_from(header.payload_len)
            .map_err(|_| Error::corrupt(22, "payload length overflows"))?;
        if r.remaining() < len {
            return Err(Error::corrupt(
                bytes.len(),
                format!("truncated payload: {} of {len} bytes", r.remaining()),
            ));
        }
        let payload = r.take(len)?.to_vec();
        if r.remaining() != 0 {
            return Err(Error::corrupt(r.offset(), "trailing bytes after payload"));
        }
        Ok(Self { header, payload })
    }

    pub fn len(&self) -> usize {
        FEATURE_HEADER_LEN + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Decoded integer indices with the header that scales them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedStream {
    pub header: FeatureHeader,
    pub frames: Vec<Vec<QuantizedKeypoint>>,
}

fn fixed_u16(value: f64, scale: f64, what: &str) -> Result<u16> {
    let scaled = value * scale;
    let rounded = scaled.round();
    if !(1.0..=f64::from(u16::MAX)).contains(&rounded) || (scaled - rounded).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "{what} {value} is not representable as u16 fixed point x{scale}"
        )));
    }
    Ok(rounded as u16)
}

fn dim_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds u16")))
}

fn in_guard_band(x: f64, y: f64, step: f64, height: usize, width: usize) -> bool {
    (-step..=width as f64 + step).contains(&x) && (-step..=height as f64 + step).contains(&y)
}

pub fn quantize_stream(
    s: &ClipFeatureStream,
    config: &FeatureCodecConfig,
) -> Result<Vec<Vec<QuantizedKeypoint>>> {
    check_step(config.pos_step, "position")?;
    check_step(config.cov_step, "covariance")?;
    s.frames()
        .iter()
        .enumerate()
        .map(|(t, f)| {
            f.points
                .iter()
                .enumerate()
                .map(|(l, k)| {
                    let p = k.position;
                    if !in_guard_band(p.x, p.y, config.pos_step, s.height(), s.width()) {
                        return Err(Error::invalid(format!(
                            "keypoint {l} of frame {t} at ({}, {}) lies outside the frame",
                            p.x, p.y
                        )));
                    }
                    quantize_keypoint(k, config.pos_step, config.cov_step)
                })
                .collect()
        })
        .collect()
}

pub fn encode_feature_stream(
    s: &ClipFeatureStream,
    config: &FeatureCodecConfig,
) -> Result<FeatureBitstream> {
    let quantized = quantize_stream(s, config)?;
    let mut raw = Vec::with_capacity(s.frame_count() * s.points_per_frame() * FIELDS_PER_POINT);
    for q in quantized.iter().flatten() {
        for v in q.fields() {
            write_zigzag(&mut raw, v);
        }
    }
    let payload = config.backend.compress(&raw)?;
    let header = FeatureHeader {
        version: FEATURE_VERSION,
        backend: config.backend,
        fps_centi: fixed_u16(s.fps(), 100.0, "fps")?,
        frames: u32::try_from(s.frame_count())
            .map_err(|_| Error::invalid("frame count exceeds u32"))?,
        points: dim_u16(s.points_per_frame(), "point count")?,
        height: dim_u16(s.height(), "height")?,
        width: dim_u16(s.width(), "width")?,
        pos_step_x16: fixed_u16(config.pos_step, 16.0, "position step")?,
        cov_step_x16: fixed_u16(config.cov_step, 16.0, "covariance step")?,
        payload_len: payload.len() as u64,
    };
    Ok(FeatureBitstream { header, payload })
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedStream> {
    let b = FeatureBitstream::parse(bytes)?;
    let h = b.header;
    let raw = h.backend.decompress(&b.payload, FEATURE_HEADER_LEN)?;
    let (n, l) = (h.frames as usize, usize::from(h.points));
    let expected = n
        .checked_mul(l)
        .and_then(|v| v.checked_mul(FIELDS_PER_POINT))
        .ok_or_else(|| Error::corrupt(8, "frame and point counts overflow"))?;

    let mut values = Vec::with_capacity(expected.min(raw.len()));
    let mut pos = 0;
    while pos < raw.len() {
        if values.len() == expected {
            return Err(Error::corrupt(
                FEATURE_HEADER_LEN,
                format!("payload holds more than {expected} values"),
            ));
        }
        let (v, used) = read_zigzag(&raw[pos..]).ok_or_else(|| {
            Error::corrupt(
                FEATURE_HEADER_LEN,
                format!("bad varint at payload byte {pos}"),
            )
        })?;
        values.push(v);
        pos += used;
    }
    if values.len() != expected {
        return Err(Error::corrupt(
            FEATURE_HEADER_LEN,
            format!(
                "payload holds {} values, header implies {expected}",
                values.len()
            ),
        ));
    }

    let mut frames = Vec::with_capacity(n);
    for (t, frame) in values
        .chunks(l.max(1) * FIELDS_PER_POINT)
        .take(n)
        .enumerate()
    {
        let points: Vec<_> = frame
            .chunks_exact(FIELDS_PER_POINT)
            .map(|c| QuantizedKeypoint::from_fields([c[0], c[1], c[2], c[3], c[4], c[5]]))
            .collect();
        for (i, q) in points.iter().enumerate() {
            let (x, y) = (q.qx as f64 * h.pos_step(), q.qy as f64 * h.pos_step());
            if !in_guard_band(x, y, h.pos_step(), h.height.into(), h.width.into()) {
                return Err(Error::corrupt(
                    FEATURE_HEADER_LEN,
                    format!("keypoint {i} of frame {t} decodes outside the frame"),
                ));
            }
        }
        frames.push(points);
    }
    // L = 0 yields no chunks; keep N empty frames.
    frames.resize(n, Vec::new());
    Ok(QuantizedStream { header: h, frames })
}

pub fn decode_feature_stream(bytes: &[u8]) -> Result<ClipFeatureStream> {
    let q = decode_quantized(bytes)?;
    let h = q.header;
    let frames = q
        .frames
        .iter()
        .map(|f| {
            FrameKeypoints::new(
                f.iter()
                    .map(|k| dequantize_keypoint(k, h.pos_step(), h.cov_step()))
                    .collect(),
            )
        })
        .collect();
    ClipFeatureStream::new(frames, h.height.into(), h.width.into(), h.fps())
}

fn write_zigzag(out: &mut Vec<u8>, v: i64) {
    let mut z = ((v << 1) ^ (v >> 63)) as u64;
    while z >= 0x80 {
        out.push((z as u8) | 0x80);
        z >>= 7;
    }
    out.push(z as u8);
}

fn read_zigzag(buf: &[u8]) -> Option<(i64, usize)> {
    let mut z: u64 = 0;
    for (i, &b) in buf.iter().enumerate().take(10) {
        let bits = u64::from(b & 0x7f);
        if i == 9 && bits > 1 {
            return None;
        }
        z |= bits << (7 * i);
        if b & 0x80 == 0 {
            return Some((((z >> 1) as i64) ^ -((z & 1) as i64), i + 1));
        }
    }
    None
}
