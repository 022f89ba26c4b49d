//! `VCMW` weight bundles.
//!
//! ```text
//! magic "VCMW" | version u8 | count u16
//! | per tensor: name_len u8, name (UTF-8), rank u8, dims u16 × rank, f32 LE × product(dims)
//! | CRC-32 (IEEE) of every preceding byte, u32 LE
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"VCMW";
pub const WEIGHTS_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidWeights(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightBundle {
    tensors: Vec<(String, Tensor)>,
}

impl WeightBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u16::try_from(self.tensors.len())
            .map_err(|_| Error::InvalidWeights("more than 65535 tensors".into()))?;
        let mut w = ByteWriter::default();
        w.bytes(WEIGHTS_MAGIC);
        w.u8(WEIGHTS_VERSION);
        w.u16(count);
        for (name, t) in &self.tensors {
            let name_len = u8::try_from(name.len())
                .map_err(|_| Error::InvalidWeights(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::InvalidWeights(format!("rank of {name} exceeds 255")))?;
            w.u8(name_len);
            w.bytes(name.as_bytes());
            w.u8(rank);
            for &d in &t.shape {
                w.u16(u16::try_from(d).map_err(|_| {
                    Error::InvalidWeights(format!("dimension {d} of {name} exceeds u16"))
                })?);
            }
            for &v in &t.data {
                w.f32(v);
            }
        }
        let mut bytes = w.into_inner();
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::corrupt(bytes.len(), "weight file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        if crc32fast::hash(body) != stored {
            return Err(Error::InvalidWeights("checksum mismatch".into()));
        }
        let mut r = ByteReader::new(body);
        if &r.array::<4>()? != WEIGHTS_MAGIC {
            return Err(Error::corrupt(0, "bad weight-file magic"));
        }
        let version = r.u8()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::corrupt(
                4,
                format!("unsupported weight-file version {version}"),
            ));
        }
        let count = r.u16()?;
        let mut bundle = Self::new();
        for _ in 0..count {
            let at = r.offset();
            let name_len = usize::from(r.u8()?);
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::corrupt(at, "tensor name is not UTF-8"))?
                .to_owned();
            let rank = usize::from(r.u8()?);
            let shape = (0..rank)
                .map(|_| r.u16().map(usize::from))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if r.remaining() < n * 4 {
                return Err(Error::corrupt(
                    r.offset(),
                    format!("tensor {name} is truncated"),
                ));
            }
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            if bundle.contains(&name) {
                return Err(Error::corrupt(at, format!("duplicate tensor {name}")));
            }
            bundle.insert(name, Tensor::new(shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::corrupt(r.offset(), "trailing bytes before checksum"));
        }
        Ok(bundle)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Adds a randomly initialized U-Net under `prefix`; see [`super::unet::UNet`] for naming.
    pub fn add_toy_unet(&mut self, prefix: &str, spec: ToyUNetSpec, rng: &mut impl Rng) {
        let mut conv = |name: String, cout: usize, cin: usize| {
            let bound = (1.0 / (cin * 9) as f32).sqrt();
            let mut w = Tensor::zeros(vec![cout, cin, 3, 3]);
            for v in w.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            let mut b = Tensor::zeros(vec![cout]);
            for v in b.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
            self.insert(format!("{name}.weight"), w);
            self.insert(format!("{name}.bias"), b);
        };
        let width = |level: usize| spec.base_channels << level;
        let mut cin = spec.in_channels;
        for level in 0..=spec.depth {
            conv(format!("{prefix}enc{level}"), width(level), cin);
            cin = width(level);
        }
        cin += spec.side_channels;
        for level in (0..spec.depth).rev() {
            conv(
                format!("{prefix}dec{level}"),
                width(level),
                cin + width(level),
            );
            cin = width(level);
        }
        conv(format!("{prefix}out"), spec.out_channels, cin);
    }

    /// Flow estimator (key frame + difference heatmaps → 2-channel flow) and
    /// appearance refinement net, seeded for reproducibility.
    pub fn toy_learned_backend(seed: u64, image_channels: usize, points: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bundle = Self::new();
        bundle.add_toy_unet(
            "flow.",
            ToyUNetSpec {
                in_channels: image_channels + points,
                out_channels: 2,
                ..ToyUNetSpec::default()
            },
            &mut rng,
        );
        bundle.add_toy_unet(
            "refine.",
            ToyUNetSpec {
                in_channels: image_channels,
                out_channels: image_channels,
                side_channels: points,
                ..ToyUNetSpec::default()
            },
            &mut rng,
        );
        bundle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyUNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    /// Extra channels concatenated onto the bottleneck.
    pub side_channels: usize,
}

impl Default for ToyUNetSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            depth: 2,
            base_channels: 8,
            side_channels: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> WeightBundle {
        let mut b = WeightBundle::new();
        b.insert(
            "a.weight",
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-3, 7.0]).unwrap(),
        );
        b.insert("b", Tensor::new(vec![1], vec![0.25]).unwrap());
        b
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = bundle().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"VCMW");
        assert_eq!(bytes[4], 1);
        assert_eq!(u16::from_le_bytes([bytes[5], bytes[6]]), 2);
        assert_eq!(bytes[7], 8);
        assert_eq!(&bytes[8..16], b"a.weight");
        assert_eq!(bytes[16], 2);
        assert_eq!(u16::from_le_bytes([bytes[17], bytes[18]]), 2);
        assert_eq!(u16::from_le_bytes([bytes[19], bytes[20]]), 3);
        assert_eq!(f32::from_le_bytes(bytes[21..25].try_into().unwrap()), 1.0);
        let n = bytes.len();
        let crc = u32::from_le_bytes(bytes[n - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..n - 4]));
    }

    #[test]
    fn round_trip_and_checksum() {
        let b = bundle();
        let bytes = b.to_bytes().unwrap();
        assert_eq!(WeightBundle::from_bytes(&bytes).unwrap(), b);
        let mut flipped = bytes.clone();
        flipped[22] ^= 1;
        assert!(matches!(
            WeightBundle::from_bytes(&flipped),
            Err(Error::InvalidWeights(_))
        ));
        assert!(WeightBundle::from_bytes(&bytes[..bytes.len() - 5]).is_err());
    }

    #[test]
    fn toy_bundles_are_seed_deterministic() {
        let a = WeightBundle::toy_learned_backend(42, 3, 4);
        let b = WeightBundle::toy_learned_backend(42, 3, 4);
        let c = WeightBundle::toy_learned_backend(43, 3, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.contains("flow.enc2.weight") && a.contains("refine.out.bias"));
        assert_eq!(
            a.get("refine.dec1.weight").unwrap().shape(),
            &[16, 32 + 4 + 16, 3, 3]
        );
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
