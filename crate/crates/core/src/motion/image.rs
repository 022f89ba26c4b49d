use crate::error::{Error, Result};

/// Interleaved (row, column, channel) samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping samples into `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dims must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "image needs 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image {height}x{width}x{channels} needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite image sample"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// `f(row, col, channel)` for every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Channel-major copy, one plane per channel.
    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels)
            .map(|c| {
                self.data
                    .iter()
                    .skip(c)
                    .step_by(self.channels)
                    .copied()
                    .collect()
            })
            .collect()
    }

    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height * width {
            for p in planes {
                data.push(p[i]);
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Snaps samples to the nearest multiple of 1/255.
    pub fn quantized_u8(&self) -> Self {
        Self {
            data: self
                .data
                .iter()
                .map(|v| f64::from(to_u8(*v)) / 255.0)
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Luma-weighted center of mass `(x, y)` of channel-mean intensity.
    pub fn center_of_mass(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let v: f64 = (0..self.channels).map(|c| self.get(y, x, c)).sum::<f64>()
                    / self.channels as f64;
                sx += v * x as f64;
                sy += v * y as f64;
                total += v;
            }
        }
        (total > 0.0).then(|| (sx / total, sy / total))
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel backward displacement: output pixel `p` samples the source at `p + flow[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    height: usize,
    width: usize,
    data: Vec<[f64; 2]>,
}

impl FlowMap {
    pub fn new(height: usize, width: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("flow dims must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "flow {height}x{width} needs {} vectors, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite flow vector"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![[0.0; 2]; height * width])
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Result<Self> {
        Self::new(height, width, vec![[dx, dy]; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.data[row * self.width + col]
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.data
    }

    /// 2× average-pooled flow with displacements halved, for half-resolution features.
    pub fn downsample2(&self) -> Result<Self> {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 2];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let v = self.get(2 * y + dy, 2 * x + dx);
                    acc[0] += v[0];
                    acc[1] += v[1];
                }
                data.push([acc[0] / 8.0, acc[1] / 8.0]);
            }
        }
        Self::new(h, w, data)
    }
}
