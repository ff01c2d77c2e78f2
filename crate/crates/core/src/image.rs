//! Real-valued grayscale image container, additive Gaussian noise and PSNR.
//!
//! Pixels are `f64` in the nominal range `[0, 255]` and are never clamped
//! inside the library; quantization happens only when writing files.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Peak value used by [`psnr`].
pub const PEAK: f64 = 255.0;

/// Row-major grayscale image with real-valued pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Wraps a row-major pixel buffer.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels ({}x{})", width * height, width, height),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Applies `f` to every pixel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of the image clamped to `[0, 255]` and rounded to integers,
    /// i.e. what an 8-bit file write would store.
    pub fn quantized(&self) -> Self {
        self.map(quantize)
    }

    /// Rectangular sub-image starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidParameter(format!(
                "crop {}x{} at ({}, {}) exceeds {}x{} image",
                width, height, row, col, self.width, self.height
            )));
        }
        Ok(Self::from_fn(width, height, |r, c| self.get(row + r, col + c)))
    }

    pub(crate) fn ensure_same_dims(&self, other: &GrayImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Clamps to `[0, 255]` and rounds half away from zero.
#[inline]
pub fn quantize(v: f64) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    v.clamp(0.0, PEAK).round()
}

/// Standard deviation and seed of a synthetic white Gaussian noise field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every pixel, without clamping.
///
/// Samples come from a ChaCha20 stream seeded with `seed_from_u64(spec.seed)`
/// and transformed by `rand_distr::StandardNormal`, drawn in row-major pixel
/// order. The same `(image, sigma, seed)` always gives a bit-identical result.
pub fn add_gaussian_noise(img: &GrayImage, spec: NoiseSpec) -> Result<GrayImage> {
    let spec = NoiseSpec::new(spec.sigma, spec.seed)?;
    if spec.sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let pixels = img
        .pixels
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + spec.sigma * n
        })
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    })
}

/// Mean squared pixel difference.
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let n = a.pixels.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio `10 log10(255^2 / MSE)` in decibels.
///
/// Identical images give `f64::INFINITY`.
pub fn psnr(reference: &GrayImage, test: &GrayImage) -> Result<f64> {
    let mse = mse(reference, test)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}
