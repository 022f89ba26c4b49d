//! `VCMC` layered container.
//!
//! ```text
//! magic "VCMC" | version u8 | clip id u64 | layer count u8
//! | per layer: type u8 (0 = feature, 1 = key frame), length u64, payload
//! ```

use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};

pub const CONTAINER_MAGIC: &[u8; 4] = b"VCMC";
pub const CONTAINER_VERSION: u8 = 1;
pub const CONTAINER_HEADER_LEN: usize = 14;
const LAYER_PREFIX_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Feature,
    KeyFrame,
}

impl LayerKind {
    pub fn id(self) -> u8 {
        match self {
            LayerKind::Feature => 0,
            LayerKind::KeyFrame => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(LayerKind::Feature),
            1 => Some(LayerKind::KeyFrame),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Feature => "feature layer (0)",
            LayerKind::KeyFrame => "key-frame layer (1)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub kind: LayerKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredBitstream {
    pub clip_id: u64,
    pub layers: Vec<Layer>,
}

impl LayeredBitstream {
    pub fn layer(&self, kind: LayerKind) -> Option<&Layer> {
        self.layers.iter().find(|l| l.kind == kind)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u8::try_from(self.layers.len())
            .map_err(|_| Error::invalid("a container holds at most 255 layers"))?;
        let body: usize = self
            .layers
            .iter()
            .map(|l| LAYER_PREFIX_LEN + l.payload.len())
            .sum();
        let mut w = ByteWriter::with_capacity(CONTAINER_HEADER_LEN + body);
        w.bytes(CONTAINER_MAGIC);
        w.u8(CONTAINER_VERSION);
        w.u64(self.clip_id);
        w.u8(count);
        for l in &self.layers {
            w.u8(l.kind.id());
            w.u64(l.payload.len() as u64);
            w.bytes(&l.payload);
        }
        Ok(w.into_inner())
    }

    /// Parses a complete container; truncation or trailing bytes are errors.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let (c, complete) = Self::parse_prefix(bytes)?;
        if !complete {
            return Err(Error::corrupt(
                bytes.len(),
                format!(
                    "container truncated after {} complete layers",
                    c.layers.len()
                ),
            ));
        }
        Ok(c)
    }

    /// Parses the header and every layer that is fully present. The flag is
    /// false when the header promised more layers than the bytes hold.
    pub fn parse_prefix(bytes: &[u8]) -> Result<(Self, bool)> {
        let mut r = ByteReader::new(bytes);
        if &r.array::<4>()? != CONTAINER_MAGIC {
            return Err(Error::corrupt(0, "bad container magic"));
        }
        let version = r.u8()?;
        if version != CONTAINER_VERSION {
            return Err(Error::corrupt(
                4,
                format!("unsupported container version {version}"),
            ));
        }
        let clip_id = r.u64()?;
        let count = usize::from(r.u8()?);
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            if r.remaining() < LAYER_PREFIX_LEN {
                return Ok((Self { clip_id, layers }, false));
            }
            let id = r.u8()?;
            let kind = LayerKind::from_id(id)
                .ok_or_else(|| Error::corrupt(at, format!("unknown layer type {id}")))?;
            if layers.iter().any(|l: &Layer| l.kind == kind) {
                return Err(Error::corrupt(at, format!("duplicate {}", kind.name())));
            }
            let len = r.u64()?;
            if (r.remaining() as u64) < len {
                return Ok((Self { clip_id, layers }, false));
            }
            let payload = r.take(len as usize)?.to_vec();
            layers.push(Layer { kind, payload });
        }
        if r.remaining() != 0 {
            return Err(Error::corrupt(
                r.offset(),
                "trailing bytes after last layer",
            ));
        }
        Ok((Self { clip_id, layers }, true))
    }
}

/// Byte range of the feature layer payload, read without touching later layers.
pub fn feature_layer_payload(bytes: &[u8]) -> Result<Vec<u8>> {
    let (c, _) = LayeredBitstream::parse_prefix(bytes)?;
    match c.layers.into_iter().next() {
        Some(Layer {
            kind: LayerKind::Feature,
            payload,
        }) => Ok(payload),
        Some(other) => Err(Error::corrupt(
            CONTAINER_HEADER_LEN,
            format!(
                "first layer is the {}, expected the feature layer",
                other.kind.name()
            ),
        )),
        None => Err(Error::corrupt(
            CONTAINER_HEADER_LEN,
            "feature layer is missing or truncated",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LayeredBitstream {
        LayeredBitstream {
            clip_id: 0x0102_0304_0506_0708,
            layers: vec![
                Layer {
                    kind: LayerKind::Feature,
                    payload: vec![1, 2, 3],
                },
                Layer {
                    kind: LayerKind::KeyFrame,
                    payload: vec![9; 5],
                },
            ],
        }
    }

    #[test]
    fn layout_is_bit_exact() {
        let b = sample().to_bytes().unwrap();
        let mut expected = b"VCMC".to_vec();
        expected.push(1);
        expected.extend_from_slice(&0x0102_0304_0506_0708u64.to_le_bytes());
        expected.push(2);
        expected.push(0);
        expected.extend_from_slice(&3u64.to_le_bytes());
        expected.extend_from_slice(&[1, 2, 3]);
        expected.push(1);
        expected.extend_from_slice(&5u64.to_le_bytes());
        expected.extend_from_slice(&[9; 5]);
        assert_eq!(b, expected);
        assert_eq!(LayeredBitstream::parse(&b).unwrap(), sample());
    }

    #[test]
    fn truncation_keeps_complete_layers() {
        let b = sample().to_bytes().unwrap();
        let after_feature = CONTAINER_HEADER_LEN + LAYER_PREFIX_LEN + 3;
        for cut in after_feature..b.len() {
            let (c, complete) = LayeredBitstream::parse_prefix(&b[..cut]).unwrap();
            assert!(!complete);
            assert_eq!(c.layers.len(), 1);
            assert_eq!(feature_layer_payload(&b[..cut]).unwrap(), vec![1, 2, 3]);
            assert!(LayeredBitstream::parse(&b[..cut]).is_err());
        }
        for cut in 0..after_feature {
            assert!(feature_layer_payload(&b[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn header_errors() {
        let b = sample().to_bytes().unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(
            LayeredBitstream::parse(&bad),
            Err(Error::CorruptStream { offset: 0, .. })
        ));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(
            LayeredBitstream::parse(&bad),
            Err(Error::CorruptStream { offset: 4, .. })
        ));
        let mut bad = b.clone();
        bad[CONTAINER_HEADER_LEN] = 7;
        assert!(LayeredBitstream::parse(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(LayeredBitstream::parse(&extra).is_err());
    }
}
