//! Grayscale image denoising with group sparsity residual coding and
//! non-local reference estimation (GSR-NLS).
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: the [`GrayImage`] container, synthetic noise and PSNR.
//! - [`io`]: binary PGM and 8-bit grayscale PNG files.
//! - [`patching`]: anchor grids, windowed block matching and overlap-averaged aggregation.
//! - [`transform`]: per-group PCA dictionaries and group coding.
//! - [`gsr`]: non-local weights, reference codes, adaptive thresholds and shrinkage.
//! - [`pipeline`]: the outer iterative-regularization loop and the noise-band parameter schedule.
//! - [`analysis`]: residual distribution study and the benchmark harness.

// `!(x > 0.0)` style checks deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod gsr;
pub mod image;
pub mod io;
pub mod patching;
pub mod pipeline;
pub mod transform;

pub use error::{Error, Result};
pub use image::{GrayImage, NoiseSpec};
pub use pipeline::{default_params, denoise, DenoiseReport, GsrParams, Mode};
