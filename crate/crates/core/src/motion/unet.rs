//! Minimal convolution engine and a small U-Net built from a [`WeightBundle`].
//!
//! Tensor naming under a prefix `p`:
//!
//! - `p enc{i}.weight` `[c_out, c_in, 3, 3]` and `p enc{i}.bias` `[c_out]`, `i = 0..=depth`;
//!   level `i > 0` runs on a 2× average-pooled input.
//! - `p dec{i}.weight/bias`, `i = 0..depth`; input is the 2× nearest-upsampled
//!   output of the level below concatenated with the `enc{i}` skip.
//! - `p out.weight/bias`: final linear 3×3 conv.
//!
//! Every conv except `out` is followed by `max(0, ·)`. A bundle with no
//! `enc` tensors is a single `out` conv applied to the input.

use super::weights::{Tensor, WeightBundle};
use crate::error::{Error, Result};

/// Channel-major activations, `channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        Self::new(channels, height, width, planes.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.plane(c).to_vec()).collect()
    }

    pub fn relu(mut self) -> Self {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
        self
    }

    pub fn avg_pool2(&self) -> Self {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut out = Self::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = self.plane(c);
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * self.width + 2 * x;
                    let s = src[i] + src[i + 1] + src[i + self.width] + src[i + self.width + 1];
                    out.data[(c * h + y) * w + x] = 0.25 * s;
                }
            }
        }
        out
    }

    pub fn upsample2(&self) -> Self {
        let (h, w) = (self.height * 2, self.width * 2);
        let mut out = Self::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = self.plane(c);
            for y in 0..h {
                for x in 0..w {
                    out.data[(c * h + y) * w + x] = src[(y / 2) * self.width + x / 2];
                }
            }
        }
        out
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::invalid(format!(
                "cannot concatenate {}x{} with {}x{} feature maps",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(
            self.channels + other.channels,
            self.height,
            self.width,
            data,
        )
    }
}

#[derive(Debug, Clone)]
struct Conv3x3 {
    name: String,
    c_out: usize,
    c_in: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv3x3 {
    fn from_bundle(bundle: &WeightBundle, name: String) -> Result<Self> {
        let get = |suffix: &str| -> Result<&Tensor> {
            bundle
                .get(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::InvalidWeights(format!("missing tensor {name}.{suffix}")))
        };
        let w = get("weight")?;
        let b = get("bias")?;
        let &[c_out, c_in, 3, 3] = w.shape() else {
            return Err(Error::InvalidWeights(format!(
                "{name}.weight must be [c_out, c_in, 3, 3], got {:?}",
                w.shape()
            )));
        };
        if b.shape() != [c_out] {
            return Err(Error::InvalidWeights(format!(
                "{name}.bias must be [{c_out}], got {:?}",
                b.shape()
            )));
        }
        Ok(Self {
            name,
            c_out,
            c_in,
            weight: w.data().iter().map(|&v| f64::from(v)).collect(),
            bias: b.data().iter().map(|&v| f64::from(v)).collect(),
        })
    }

    /// Stride 1, zero padding 1.
    fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels != self.c_in {
            return Err(Error::InvalidWeights(format!(
                "{} expects {} input channels, got {}",
                self.name, self.c_in, x.channels
            )));
        }
        let (h, w) = (x.height, x.width);
        let mut out = FeatureMap::zeros(self.c_out, h, w);
        for co in 0..self.c_out {
            let dst = &mut out.data[co * h * w..(co + 1) * h * w];
            dst.fill(self.bias[co]);
            for ci in 0..self.c_in {
                let src = x.plane(ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = self.weight[((co * self.c_in + ci) * 3 + ky) * 3 + kx];
                        if k == 0.0 {
                            continue;
                        }
                        // Output rows/cols whose shifted source index stays in bounds.
                        let (y_lo, y_hi) = (usize::from(ky == 0), h - usize::from(ky == 2));
                        let (x_lo, x_hi) = (usize::from(kx == 0), w - usize::from(kx == 2));
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            for xx in x_lo..x_hi {
                                dst[y * w + xx] += k * src[sy * w + xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct UNet {
    enc: Vec<Conv3x3>,
    dec: Vec<Conv3x3>,
    out: Conv3x3,
    side_channels: usize,
}

impl UNet {
    /// Loads the layers under `prefix`. `side_channels` extra channels are
    /// expected at the bottleneck when running [`UNet::forward_with`].
    pub fn from_bundle(bundle: &WeightBundle, prefix: &str, side_channels: usize) -> Result<Self> {
        let mut enc = Vec::new();
        while bundle.contains(&format!("{prefix}enc{}.weight", enc.len())) {
            enc.push(Conv3x3::from_bundle(
                bundle,
                format!("{prefix}enc{}", enc.len()),
            )?);
        }
        let depth = enc.len().saturating_sub(1);
        let dec = (0..depth)
            .map(|level| Conv3x3::from_bundle(bundle, format!("{prefix}dec{level}")))
            .collect::<Result<Vec<_>>>()?;
        let out = Conv3x3::from_bundle(bundle, format!("{prefix}out"))?;

        let mismatch = |conv: &Conv3x3, expected: usize| {
            Error::InvalidWeights(format!(
                "{} expects {} input channels but receives {expected}",
                conv.name, conv.c_in
            ))
        };
        if enc.is_empty() {
            if side_channels != 0 {
                return Err(Error::InvalidWeights(format!(
                    "{prefix}: side channels need an encoder"
                )));
            }
        } else {
            for pair in enc.windows(2) {
                if pair[1].c_in != pair[0].c_out {
                    return Err(mismatch(&pair[1], pair[0].c_out));
                }
            }
            let mut cur = enc[depth].c_out + side_channels;
            for level in (0..depth).rev() {
                let expected = cur + enc[level].c_out;
                if dec[level].c_in != expected {
                    return Err(mismatch(&dec[level], expected));
                }
                cur = dec[level].c_out;
            }
            if out.c_in != cur {
                return Err(mismatch(&out, cur));
            }
        }
        Ok(Self {
            enc,
            dec,
            out,
            side_channels,
        })
    }

    pub fn depth(&self) -> usize {
        self.enc.len().saturating_sub(1)
    }

    pub fn in_channels(&self) -> usize {
        self.enc.first().unwrap_or(&self.out).c_in
    }

    pub fn out_channels(&self) -> usize {
        self.out.c_out
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        self.forward_with(input, &mut |_, f| Ok(f), None)
    }

    /// Forward pass where every encoder output (skips and bottleneck) passes
    /// through `transform(level, features)` before the decoder consumes it, and
    /// `side` (full resolution) is pooled down and appended to the bottleneck.
    pub fn forward_with(
        &self,
        input: &FeatureMap,
        transform: &mut dyn FnMut(usize, FeatureMap) -> Result<FeatureMap>,
        side: Option<&FeatureMap>,
    ) -> Result<FeatureMap> {
        if input.channels != self.in_channels() {
            return Err(Error::InvalidWeights(format!(
                "network expects {} input channels, got {}",
                self.in_channels(),
                input.channels
            )));
        }
        match (side, self.side_channels) {
            (None, 0) => {}
            (Some(s), n) if s.channels == n && n > 0 => {}
            (s, n) => {
                return Err(Error::InvalidWeights(format!(
                    "network expects {n} side channels, got {}",
                    s.map_or(0, |s| s.channels)
                )))
            }
        }
        if self.enc.is_empty() {
            return self.out.apply(input);
        }
        let depth = self.depth();
        let factor = 1usize << depth;
        if !input.height.is_multiple_of(factor) || !input.width.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "input {}x{} is not divisible by {factor}",
                input.height, input.width
            )));
        }

        let mut skips = Vec::with_capacity(self.enc.len());
        let mut x = input.clone();
        for (level, conv) in self.enc.iter().enumerate() {
            if level > 0 {
                x = x.avg_pool2();
            }
            x = conv.apply(&x)?.relu();
            skips.push(x.clone());
        }
        let bottleneck = skips.pop().expect("encoder is non-empty");
        let mut x = transform(depth, bottleneck)?;
        if let Some(side) = side {
            let mut s = side.clone();
            for _ in 0..depth {
                s = s.avg_pool2();
            }
            x = x.concat(&s)?;
        }
        for level in (0..depth).rev() {
            let skip = transform(level, skips.pop().expect("one skip per level"))?;
            x = x.upsample2().concat(&skip)?;
            x = self.dec[level].apply(&x)?.relu();
        }
        self.out.apply(&x)
    }
}

pub fn unet_forward(weights: &WeightBundle, input: &FeatureMap) -> Result<FeatureMap> {
    UNet::from_bundle(weights, "", 0)?.forward(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::weights::ToyUNetSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> FeatureMap {
        let data = (0..c * h * w)
            .map(|i| ((i * 37) % 101) as f64 / 100.0 - 0.3)
            .collect();
        FeatureMap::new(c, h, w, data).unwrap()
    }

    fn identity_bundle(c: usize) -> WeightBundle {
        let mut w = Tensor::zeros(vec![c, c, 3, 3]);
        for i in 0..c {
            w.data_mut()[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
        }
        let mut b = WeightBundle::new();
        b.insert("out.weight", w);
        b.insert("out.bias", Tensor::zeros(vec![c]));
        b
    }

    /// Direct zero-padded convolution for one output sample.
    fn conv_oracle(x: &FeatureMap, w: &[f64], cin: usize, co: usize, y: usize, xx: usize) -> f64 {
        let mut acc = 0.0;
        for ci in 0..cin {
            for ky in 0..3 {
                for kx in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    let sx = xx as isize + kx as isize - 1;
                    if sy < 0 || sx < 0 || sy >= x.height as isize || sx >= x.width as isize {
                        continue;
                    }
                    acc += w[((co * cin + ci) * 3 + ky) * 3 + kx]
                        * x.plane(ci)[sy as usize * x.width + sx as usize];
                }
            }
        }
        acc
    }

    #[test]
    fn identity_conv_is_identity() {
        let x = ramp(3, 8, 8);
        let y = unet_forward(&identity_bundle(3), &x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let mut b = WeightBundle::new();
        b.add_toy_unet(
            "",
            ToyUNetSpec {
                in_channels: 2,
                out_channels: 3,
                depth: 0,
                ..ToyUNetSpec::default()
            },
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let conv = Conv3x3::from_bundle(&b, "enc0".into()).unwrap();
        let x = ramp(2, 5, 7);
        let y = conv.apply(&x).unwrap();
        for co in 0..conv.c_out {
            for r in 0..5 {
                for c in 0..7 {
                    let expected = conv.bias[co] + conv_oracle(&x, &conv.weight, 2, co, r, c);
                    assert!((y.plane(co)[r * 7 + c] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut b = WeightBundle::new();
        b.add_toy_unet(
            "",
            ToyUNetSpec::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let zeroed: Vec<(String, Tensor)> = b
            .names()
            .map(|n| {
                (
                    n.to_owned(),
                    Tensor::zeros(b.get(n).unwrap().shape().to_vec()),
                )
            })
            .collect();
        let mut z = WeightBundle::new();
        for (n, t) in zeroed {
            z.insert(n, t);
        }
        let y = unet_forward(&z, &ramp(3, 16, 16)).unwrap();
        assert_eq!((y.channels(), y.height(), y.width()), (3, 16, 16));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_shape_preserving() {
        let mut b = WeightBundle::new();
        b.add_toy_unet(
            "",
            ToyUNetSpec::default(),
            &mut ChaCha8Rng::seed_from_u64(5),
        );
        let net = UNet::from_bundle(&b, "", 0).unwrap();
        assert_eq!(net.depth(), 2);
        let x = ramp(3, 16, 12);
        let a = net.forward(&x).unwrap();
        let c = net.forward(&x).unwrap();
        assert_eq!(a.data(), c.data());
        assert_eq!((a.channels(), a.height(), a.width()), (3, 16, 12));
    }

    #[test]
    fn shape_errors() {
        let mut b = WeightBundle::new();
        b.add_toy_unet(
            "",
            ToyUNetSpec::default(),
            &mut ChaCha8Rng::seed_from_u64(5),
        );
        assert!(matches!(
            unet_forward(&b, &ramp(2, 16, 16)),
            Err(Error::InvalidWeights(_))
        ));
        assert!(matches!(
            unet_forward(&b, &ramp(3, 10, 16)),
            Err(Error::InvalidInput(_))
        ));
        b.insert("dec0.bias", Tensor::zeros(vec![5]));
        assert!(matches!(
            unet_forward(&b, &ramp(3, 16, 16)),
            Err(Error::InvalidWeights(_))
        ));
        assert!(unet_forward(&WeightBundle::new(), &ramp(3, 4, 4)).is_err());
    }

    #[test]
    fn pooling_and_upsampling() {
        let x = FeatureMap::new(1, 2, 4, vec![1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 4.0, 8.0]).unwrap();
        assert_eq!(x.avg_pool2().data(), &[4.0, 3.0]);
        let u = x.avg_pool2().upsample2();
        assert_eq!(u.data(), &[4.0, 4.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0]);
    }
}
