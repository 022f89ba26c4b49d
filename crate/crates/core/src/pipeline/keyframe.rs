//! Key-frame layer codecs.
//!
//! Layer payload:
//! ```text
//! codec id u8 | key index u32 | params_len u16, params (UTF-8) | data_len u64, data
//! ```
//! Codec 0 stores the frame as an 8-bit PNM compressed with LZMA. Codec 1
//! runs an external command; `params` records its template.

use std::fs;
use std::process::Command;

use super::pnm::{read_pnm, write_pnm};
use crate::error::{Error, Result};
use crate::keypoint::CompressionBackend;
use crate::motion::Image;
use crate::wire::{ByteReader, ByteWriter};

/// Overrides the external command template at encode and decode time.
pub const KEYFRAME_CODEC_ENV: &str = "VCM_KEYFRAME_CODEC";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum KeyframeCodec {
    #[default]
    Lossless,
    /// Shell command template with `{mode}` (`encode`/`decode`), `{input}`
    /// and `{output}` placeholders. Encoding reads a PNM from `{input}` and
    /// writes the compressed bytes to `{output}`; decoding does the reverse.
    External { template: String },
}

impl KeyframeCodec {
    pub fn id(&self) -> u8 {
        match self {
            KeyframeCodec::Lossless => 0,
            KeyframeCodec::External { .. } => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KeyframeCodec::Lossless => "lossless",
            KeyframeCodec::External { .. } => "external",
        }
    }

    /// `"lossless"` or a command template.
    pub fn parse(setting: &str) -> Result<Self> {
        let s = setting.trim();
        if s.is_empty() {
            return Err(Error::invalid("empty key-frame codec setting"));
        }
        if s == "lossless" {
            return Ok(KeyframeCodec::Lossless);
        }
        for p in ["{input}", "{output}"] {
            if !s.contains(p) {
                return Err(Error::invalid(format!(
                    "codec template lacks the {p} placeholder"
                )));
            }
        }
        Ok(KeyframeCodec::External {
            template: s.to_owned(),
        })
    }

    /// The environment override when set, else `fallback`.
    pub fn from_env_or(fallback: KeyframeCodec) -> Result<Self> {
        match std::env::var(KEYFRAME_CODEC_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::parse(&v),
            _ => Ok(fallback),
        }
    }

    fn params(&self) -> &str {
        match self {
            KeyframeCodec::Lossless => "",
            KeyframeCodec::External { template } => template,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframePayload {
    pub codec_id: u8,
    pub key_index: u32,
    pub params: String,
    pub data: Vec<u8>,
}

impl KeyframePayload {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let plen = u16::try_from(self.params.len())
            .map_err(|_| Error::invalid("codec parameters exceed 65535 bytes"))?;
        let mut w = ByteWriter::with_capacity(16 + self.params.len() + self.data.len());
        w.u8(self.codec_id);
        w.u32(self.key_index);
        w.u16(plen);
        w.bytes(self.params.as_bytes());
        w.u64(self.data.len() as u64);
        w.bytes(&self.data);
        Ok(w.into_inner())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let codec_id = r.u8()?;
        if codec_id > 1 {
            return Err(Error::corrupt(
                0,
                format!("unknown key-frame codec id {codec_id}"),
            ));
        }
        let key_index = r.u32()?;
        let plen = usize::from(r.u16()?);
        let at = r.offset();
        let params = std::str::from_utf8(r.take(plen)?)
            .map_err(|_| Error::corrupt(at, "codec parameters are not UTF-8"))?
            .to_owned();
        let dlen = r.u64()?;
        if r.remaining() as u64 != dlen {
            return Err(Error::corrupt(
                r.offset(),
                format!(
                    "key-frame data holds {} bytes, header says {dlen}",
                    r.remaining()
                ),
            ));
        }
        let data = r.take(dlen as usize)?.to_vec();
        Ok(Self {
            codec_id,
            key_index,
            params,
            data,
        })
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Runs `template` on `input`, returning the bytes it wrote to the output file.
fn run_external(
    template: &str,
    mode: &str,
    input: &[u8],
    in_ext: &str,
    out_ext: &str,
) -> std::result::Result<Vec<u8>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let in_path = dir.path().join(format!("input.{in_ext}"));
    let out_path = dir.path().join(format!("output.{out_ext}"));
    fs::write(&in_path, input).map_err(|e| e.to_string())?;
    let cmd = template
        .replace("{mode}", mode)
        .replace("{input}", &shell_quote(&in_path.to_string_lossy()))
        .replace("{output}", &shell_quote(&out_path.to_string_lossy()));
    let out = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| format!("cannot spawn `{cmd}`: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`{cmd}` exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    fs::read(&out_path).map_err(|e| format!("`{cmd}` produced no output file: {e}"))
}

pub fn encode_key_frame(
    frame: &Image,
    key_index: u32,
    codec: &KeyframeCodec,
) -> Result<KeyframePayload> {
    let pnm = write_pnm(frame);
    let data = match codec {
        KeyframeCodec::Lossless => CompressionBackend::Lzma.compress(&pnm)?,
        KeyframeCodec::External { template } => {
            run_external(template, "encode", &pnm, "pnm", "bin").map_err(|diagnostic| {
                Error::Encode {
                    backend: codec.name().into(),
                    diagnostic,
                }
            })?
        }
    };
    Ok(KeyframePayload {
        codec_id: codec.id(),
        key_index,
        params: codec.params().to_owned(),
        data,
    })
}

/// Decodes with the recorded codec; for the external codec the environment
/// override takes precedence over the recorded template.
pub fn decode_key_frame(payload: &KeyframePayload) -> Result<Image> {
    let pnm = match payload.codec_id {
        0 => CompressionBackend::Lzma
            .decompress(&payload.data, 0)
            .map_err(|e| Error::Decode(format!("key frame: {e}")))?,
        _ => {
            let codec = KeyframeCodec::from_env_or(KeyframeCodec::parse(&payload.params)?)?;
            let KeyframeCodec::External { template } = codec else {
                return Err(Error::Decode(
                    "key frame needs an external codec but the override selects lossless".into(),
                ));
            };
            run_external(&template, "decode", &payload.data, "bin", "pnm").map_err(Error::Decode)?
        }
    };
    read_pnm(&pnm).map_err(|e| Error::Decode(format!("key frame image: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> Image {
        Image::from_fn(12, 10, 3, |y, x, c| {
            ((y * 10 + x + c * 40) % 256) as f64 / 255.0
        })
        .unwrap()
    }

    #[test]
    fn lossless_round_trip() {
        let p = encode_key_frame(&frame(), 0, &KeyframeCodec::Lossless).unwrap();
        assert_eq!(p.codec_id, 0);
        let back = KeyframePayload::parse(&p.to_bytes().unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(decode_key_frame(&back).unwrap(), frame());
    }

    #[test]
    fn external_copy_codec_round_trip() {
        let codec = KeyframeCodec::parse("cp {input} {output} # {mode}").unwrap();
        let p = encode_key_frame(&frame(), 3, &codec).unwrap();
        assert_eq!(p.codec_id, 1);
        assert_eq!(p.params, "cp {input} {output} # {mode}");
        assert_eq!(p.data, write_pnm(&frame()));
        assert_eq!(decode_key_frame(&p).unwrap(), frame());
    }

    #[test]
    fn external_failure_carries_stderr() {
        let codec = KeyframeCodec::parse("echo broken >&2; exit 3 # {input} {output}").unwrap();
        match encode_key_frame(&frame(), 0, &codec) {
            Err(Error::Encode {
                backend,
                diagnostic,
            }) => {
                assert_eq!(backend, "external");
                assert!(diagnostic.contains("broken"), "{diagnostic}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn setting_validation() {
        assert_eq!(
            KeyframeCodec::parse("lossless").unwrap(),
            KeyframeCodec::Lossless
        );
        assert!(KeyframeCodec::parse("x265 {input}").is_err());
        assert!(KeyframeCodec::parse("  ").is_err());
    }

    #[test]
    fn payload_parse_rejects_bad_lengths() {
        let p = encode_key_frame(&frame(), 0, &KeyframeCodec::Lossless).unwrap();
        let bytes = p.to_bytes().unwrap();
        assert!(KeyframePayload::parse(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(KeyframePayload::parse(&longer).is_err());
        let mut bad = bytes;
        bad[0] = 9;
        assert!(KeyframePayload::parse(&bad).is_err());
    }
}
