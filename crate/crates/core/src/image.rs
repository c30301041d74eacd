//! RGB images with values in `[0, 1]`, and the resampling filters used for
//! crop mining and anchor upsampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An `H×W×3` image stored row-major, channel-last.
#[derive(Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageTensor")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::shape(
                "ImageTensor::new",
                height * width * CHANNELS,
                pixels.len(),
            ));
        }
        if let Some(bad) = pixels.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::OutOfRange {
                what: "pixel value",
                detail: format!("{bad} not in [0, 1]"),
            });
        }
        Ok(Self { height, width, pixels })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    /// Non-finite values are rejected.
    pub fn from_clamped(height: usize, width: usize, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for v in values {
            if !v.is_finite() {
                return Err(Error::Generation(format!("non-finite pixel value {v}")));
            }
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    /// Channel-first `f64` copy, the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * CHANNELS];
        for (i, px) in self.pixels.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + i] = f64::from(px[c]);
            }
        }
        out
    }

    /// Inverse of [`to_chw`](Self::to_chw), clamping into `[0, 1]`.
    pub fn from_chw(height: usize, width: usize, chw: &[f64]) -> Result<Self> {
        let plane = height * width;
        if chw.len() != plane * CHANNELS {
            return Err(Error::shape("ImageTensor::from_chw", plane * CHANNELS, chw.len()));
        }
        Self::from_clamped(
            height,
            width,
            (0..plane).flat_map(|i| (0..CHANNELS).map(move |c| chw[c * plane + i])),
        )
    }

    /// 8-bit quantization, round-half-up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| dequantize(b)).collect())
    }

    /// Snap every pixel onto the 8-bit grid.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| dequantize(quantize(v))).collect(),
        }
    }

    pub fn crop(&self, rect: CropRect) -> Result<Self> {
        if !rect.fits(self.height, self.width) {
            return Err(Error::OutOfRange {
                what: "crop rectangle",
                detail: format!("{rect:?} outside {}x{}", self.height, self.width),
            });
        }
        let mut pixels = Vec::with_capacity(rect.height * rect.width * CHANNELS);
        for y in rect.top..rect.top + rect.height {
            let start = (y * self.width + rect.left) * CHANNELS;
            pixels.extend_from_slice(&self.pixels[start..start + rect.width * CHANNELS]);
        }
        Self::new(rect.height, rect.width, pixels)
    }

    /// SHA-256 over dimensions and the raw `f32` bit patterns.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.pixels {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape("mean_abs_diff", self.shape(), other.shape()));
        }
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| f64::from((a - b).abs()))
            .sum();
        Ok(sum / self.pixels.len() as f64)
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(b: u8) -> f32 {
    f32::from(b) / 255.0
}

/// Axis-aligned crop rectangle in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= height && self.left + self.width <= width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Bilinear,
    #[default]
    Bicubic,
}

impl Interpolation {
    pub fn code(self) -> u8 {
        match self {
            Interpolation::Nearest => 0,
            Interpolation::Bilinear => 1,
            Interpolation::Bicubic => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Interpolation::Nearest),
            1 => Some(Interpolation::Bilinear),
            2 => Some(Interpolation::Bicubic),
            _ => None,
        }
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            "bicubic" => Ok(Interpolation::Bicubic),
            _ => Err(Error::config("interpolation", format!("unknown filter {s:?}"))),
        }
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps (source index, weight) for each output coordinate along one axis,
/// using half-pixel centres and edge replication.
fn axis_taps(src_len: usize, dst_len: usize, interp: Interpolation) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / dst_len as f64;
    let last = src_len as isize - 1;
    let clampi = |i: isize| i.clamp(0, last) as usize;
    (0..dst_len)
        .map(|d| {
            let s = (d as f64 + 0.5) * scale - 0.5;
            match interp {
                Interpolation::Nearest => {
                    let i = ((d as f64 + 0.5) * scale).floor() as isize;
                    vec![(clampi(i), 1.0)]
                }
                Interpolation::Bilinear => {
                    let s = s.max(0.0);
                    let i0 = s.floor();
                    let frac = s - i0;
                    let i0 = i0 as isize;
                    vec![(clampi(i0), 1.0 - frac), (clampi(i0 + 1), frac)]
                }
                Interpolation::Bicubic => {
                    let i0 = s.floor();
                    let frac = s - i0;
                    let i0 = i0 as isize;
                    (-1..=2).map(|k| (clampi(i0 + k), cubic(frac - k as f64))).collect()
                }
            }
        })
        .collect()
}

/// Separable resize to `height×width`, result clamped into `[0, 1]`.
pub fn resize(img: &ImageTensor, height: usize, width: usize, interp: Interpolation) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput(format!(
            "resize target must be positive, got {height}x{width}"
        )));
    }
    if img.shape() == (height, width) {
        return Ok(img.clone());
    }
    let (sh, sw) = img.shape();
    let xtaps = axis_taps(sw, width, interp);
    let ytaps = axis_taps(sh, height, interp);

    // horizontal pass: sh × width × C
    let mut tmp = vec![0.0f64; sh * width * CHANNELS];
    for y in 0..sh {
        for (x, taps) in xtaps.iter().enumerate() {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for &(sx, w) in taps {
                    acc += w * f64::from(img.get(y, sx, c));
                }
                tmp[(y * width + x) * CHANNELS + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f64; height * width * CHANNELS];
    for (y, taps) in ytaps.iter().enumerate() {
        for x in 0..width {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for &(sy, w) in taps {
                    acc += w * tmp[(sy * width + x) * CHANNELS + c];
                }
                out[(y * width + x) * CHANNELS + c] = acc;
            }
        }
    }
    ImageTensor::from_clamped(height, width, out)
}
