//! Binary portable anymap I/O: P5 (gray) and P6 (RGB), 8- or 16-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::motion::Image;

/// Encodes `img` as 8-bit P5 or P6, rounding each sample to the nearest level.
pub fn write_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&img.to_u8());
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::corrupt(start, format!("pnm header: expected {what}")))
    }
}

pub fn read_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::corrupt(0, "not a binary P5/P6 image")),
    };
    let mut c = HeaderCursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::corrupt(2, "pnm dims must be nonzero"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::corrupt(
            c.pos,
            format!("pnm maxval {maxval} out of range"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::corrupt(c.pos, "pnm header not terminated"));
    }
    let start = c.pos + 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let n = height * width * channels;
    let raster = &bytes[start..];
    if raster.len() != n * sample_bytes {
        return Err(Error::corrupt(
            start,
            format!(
                "pnm raster holds {} bytes, expected {}",
                raster.len(),
                n * sample_bytes
            ),
        ));
    }
    let scale = maxval as f64;
    let data = if sample_bytes == 1 {
        raster.iter().map(|&v| f64::from(v) / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|p| f64::from(u16::from_be_bytes([p[0], p[1]])) / scale)
            .collect()
    };
    Image::new(height, width, channels, data)
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Image> {
    read_pnm(&fs::read(path)?)
}

pub fn save_pnm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    fs::write(path, write_pnm(img))?;
    Ok(())
}
