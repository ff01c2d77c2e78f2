//! Residual distribution study and the benchmark harness.
//!
//! The study compares noisy group codes against oracle codes of the clean
//! image (the clean group projected on the noisy group's PCA dictionary) and
//! fits zero-mean Gaussian, Laplacian and hyper-Laplacian models to the
//! difference by maximum likelihood.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::image::{add_gaussian_noise, psnr, GrayImage, NoiseSpec};
use crate::patching::{anchor_grid, block_match, extract_group};
use crate::pipeline::{default_params, denoise, GsrParams, Mode};
use crate::transform::{build_pca_dictionary, encode};

/// Smallest sample count accepted by [`fit_distributions`].
pub const MIN_FIT_SAMPLES: usize = 100;

/// Shape exponents tried for the hyper-Laplacian fit.
pub const HYPER_LAPLACIAN_SHAPES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// All entries of `A_i - B_i` over every group of the anchor grid, where
/// `A_i` codes the noisy group and `B_i` the co-located clean group over
/// the noisy group's dictionary. Groups are matched on `noisy`.
pub fn oracle_residuals(clean: &GrayImage, noisy: &GrayImage, params: &GsrParams) -> Result<Vec<f64>> {
    clean.ensure_same_dims(noisy)?;
    params.validate()?;
    let anchors = anchor_grid(noisy, params.patch_side, params.stride)?;
    let per_group: Vec<Vec<f64>> = anchors
        .par_iter()
        .map(|&anchor| {
            let group = block_match(noisy, anchor, params.window, params.m)?;
            let dict = build_pca_dictionary(&group)?;
            let noisy_codes = encode(&dict, &group.data)?;
            let clean_codes = encode(&dict, &extract_group(clean, &group.members)?)?;
            Ok((noisy_codes.coeffs - clean_codes.coeffs).as_slice().to_vec())
        })
        .collect::<Result<_>>()?;
    Ok(per_group.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Laplacian,
    HyperLaplacian,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Laplacian => "laplacian",
            Family::HyperLaplacian => "hyper_laplacian",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A zero-mean fit of one family.
///
/// `scale` is the standard deviation for the Gaussian, the mean absolute
/// value for the Laplacian, and `s` in `p / (2 s Gamma(1/p)) exp(-(|x|/s)^p)`
/// for the hyper-Laplacian. `shape` is 2, 1 and `p` respectively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionFit {
    pub family: Family,
    pub scale: f64,
    pub shape: f64,
    pub log_likelihood: f64,
}

impl DistributionFit {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let s = self.scale;
        match self.family {
            Family::Gaussian => -0.5 * (2.0 * PI * s * s).ln() - x * x / (2.0 * s * s),
            Family::Laplacian => -(2.0 * s).ln() - x.abs() / s,
            Family::HyperLaplacian => {
                let p = self.shape;
                p.ln() - (2.0 * s).ln() - ln_gamma(1.0 / p) - (x.abs() / s).powf(p)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }
}

fn with_log_likelihood(family: Family, scale: f64, shape: f64, samples: &[f64]) -> DistributionFit {
    let mut fit = DistributionFit {
        family,
        scale,
        shape,
        log_likelihood: 0.0,
    };
    fit.log_likelihood = samples.iter().map(|&x| fit.log_pdf(x)).sum();
    fit
}

/// Maximum-likelihood fits of the three zero-mean families, in the order
/// Gaussian, Laplacian, hyper-Laplacian.
///
/// The hyper-Laplacian keeps the best `p` of [`HYPER_LAPLACIAN_SHAPES`],
/// each with its closed-form scale `s = (p * mean |x|^p)^(1/p)`.
pub fn fit_distributions(samples: &[f64]) -> Result<Vec<DistributionFit>> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_FIT_SAMPLES} samples to fit, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSamples("non-finite sample".to_string()));
    }
    let n = samples.len() as f64;
    let mean_sq = samples.iter().map(|x| x * x).sum::<f64>() / n;
    let mean_abs = samples.iter().map(|x| x.abs()).sum::<f64>() / n;
    if !(mean_abs > 0.0) {
        return Err(Error::DegenerateSamples(
            "all samples are zero, every fitted scale would be 0".to_string(),
        ));
    }

    let gaussian = with_log_likelihood(Family::Gaussian, mean_sq.sqrt(), 2.0, samples);
    let laplacian = with_log_likelihood(Family::Laplacian, mean_abs, 1.0, samples);
    let hyper = HYPER_LAPLACIAN_SHAPES
        .iter()
        .map(|&p| {
            let moment = samples.iter().map(|x| x.abs().powf(p)).sum::<f64>() / n;
            with_log_likelihood(Family::HyperLaplacian, (p * moment).powf(1.0 / p), p, samples)
        })
        .fold(None::<DistributionFit>, |best, fit| match best {
            Some(b) if b.log_likelihood >= fit.log_likelihood => Some(b),
            _ => Some(fit),
        })
        .expect("shape grid is non-empty");
    Ok(vec![gaussian, laplacian, hyper])
}

/// The fit with the largest log-likelihood (earliest on ties).
pub fn best_fit(fits: &[DistributionFit]) -> Option<&DistributionFit> {
    fits.iter()
        .fold(None, |best: Option<&DistributionFit>, f| match best {
            Some(b) if b.log_likelihood >= f.log_likelihood => Some(b),
            _ => Some(f),
        })
}

/// One histogram bin with the fitted densities at its centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_center: f64,
    pub empirical: f64,
    pub gaussian: f64,
    pub laplacian: f64,
    pub hyper_laplacian: f64,
}

/// Equal-width histogram over `[min, max]` of `samples`, normalized to a
/// density, with the pdf of each fit evaluated at the bin centres. With
/// `log_domain` every density column is `log10` of the density (`-inf`
/// for empty bins).
pub fn histogram(samples: &[f64], bins: usize, fits: &[DistributionFit], log_domain: bool) -> Result<Vec<HistogramRow>> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("bins must be >= 2, got {bins}")));
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::DegenerateSamples(
            "samples must span a finite, non-empty range".to_string(),
        ));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let pdf_of = |family: Family, x: f64| {
        fits.iter()
            .find(|f| f.family == family)
            .map_or(f64::NAN, |f| f.pdf(x))
    };
    let out = |d: f64| if log_domain { d.log10() } else { d };
    let total = samples.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let x = lo + (i as f64 + 0.5) * width;
            HistogramRow {
                bin_center: x,
                empirical: out(c as f64 / (total * width)),
                gaussian: out(pdf_of(Family::Gaussian, x)),
                laplacian: out(pdf_of(Family::Laplacian, x)),
                hyper_laplacian: out(pdf_of(Family::HyperLaplacian, x)),
            }
        })
        .collect())
}

/// Fits the three families, writes the histogram CSV to `path` and returns
/// the fits and rows.
pub fn emit_histogram(
    samples: &[f64],
    bins: usize,
    log_domain: bool,
    path: impl AsRef<Path>,
) -> Result<(Vec<DistributionFit>, Vec<HistogramRow>)> {
    let fits = fit_distributions(samples)?;
    let rows = histogram(samples, bins, &fits, log_domain)?;
    write_csv(&rows, path.as_ref())?;
    Ok((fits, rows))
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_histogram_csv(path: impl AsRef<Path>) -> Result<Vec<HistogramRow>> {
    read_csv(path.as_ref())
}

/// One (image, sigma, method) benchmark measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub image: String,
    pub sigma: f64,
    pub method: Mode,
    pub psnr_db: f64,
    /// Wall time of the denoiser in seconds.
    pub time_s: f64,
    pub iterations: usize,
}

/// A benchmark case that could not be run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchFailure {
    pub image: String,
    pub sigma: f64,
    pub method: Mode,
    pub message: String,
}

/// Mean PSNR and time for one (sigma, method) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchMean {
    pub sigma: f64,
    pub method: Mode,
    pub count: usize,
    pub mean_psnr_db: f64,
    pub mean_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    /// Per (sigma, method), in first-seen row order.
    pub means: Vec<BenchMean>,
    pub failures: Vec<BenchFailure>,
}

impl BenchSummary {
    pub fn from_rows(rows: &[BenchRow], failures: Vec<BenchFailure>) -> Self {
        let mut means: Vec<BenchMean> = Vec::new();
        for row in rows {
            let slot = match means
                .iter_mut()
                .position(|m| m.sigma == row.sigma && m.method == row.method)
            {
                Some(i) => &mut means[i],
                None => {
                    means.push(BenchMean {
                        sigma: row.sigma,
                        method: row.method,
                        count: 0,
                        mean_psnr_db: 0.0,
                        mean_time_s: 0.0,
                    });
                    means.last_mut().unwrap()
                }
            };
            slot.count += 1;
            slot.mean_psnr_db += row.psnr_db;
            slot.mean_time_s += row.time_s;
        }
        for m in &mut means {
            m.mean_psnr_db /= m.count as f64;
            m.mean_time_s /= m.count as f64;
        }
        Self { means, failures }
    }
}

impl fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.means.is_empty() {
            writeln!(f, "no benchmark rows")?;
        }
        for m in &self.means {
            writeln!(
                f,
                "sigma {:>5} {:<3}  images {:>3}  mean PSNR {:>7.3} dB  mean time {:>8.3} s",
                m.sigma, m.method, m.count, m.mean_psnr_db, m.mean_time_s
            )?;
        }
        for fail in &self.failures {
            writeln!(
                f,
                "FAILED {} sigma {} {}: {}",
                fail.image, fail.sigma, fail.method, fail.message
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: BenchSummary,
}

/// Adds noise with `seed` to every image at every sigma and denoises it with
/// every method, in (image, sigma, method) order. `adjust` may override the
/// default schedule for each case. Failing cases are skipped and listed in
/// the summary.
pub fn run_benchmark(
    images: &[(String, GrayImage)],
    sigmas: &[f64],
    methods: &[Mode],
    seed: u64,
    adjust: impl Fn(&mut GsrParams),
) -> BenchReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (name, clean) in images {
        for &sigma in sigmas {
            for &method in methods {
                match bench_case(clean, sigma, method, seed, &adjust) {
                    Ok((psnr_db, time_s, iterations)) => rows.push(BenchRow {
                        image: name.clone(),
                        sigma,
                        method,
                        psnr_db,
                        time_s,
                        iterations,
                    }),
                    Err(e) => failures.push(BenchFailure {
                        image: name.clone(),
                        sigma,
                        method,
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    let summary = BenchSummary::from_rows(&rows, failures);
    BenchReport { rows, summary }
}

fn bench_case(
    clean: &GrayImage,
    sigma: f64,
    method: Mode,
    seed: u64,
    adjust: &impl Fn(&mut GsrParams),
) -> Result<(f64, f64, usize)> {
    let mut params = default_params(sigma)?;
    params.mode = method;
    adjust(&mut params);
    let noisy = add_gaussian_noise(clean, NoiseSpec::new(sigma, seed)?)?;
    let report = denoise(&noisy, &params, None)?;
    let psnr_db = psnr(clean, &report.output.quantized())?;
    Ok((psnr_db, report.wall_time.as_secs_f64(), report.iterations_run))
}

/// Writes `image,sigma,method,psnr_db,time_s,iterations` with a header.
pub fn write_bench_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        // serde only emits the header together with the first record
        return std::fs::write(path, "image,sigma,method,psnr_db,time_s,iterations\n")
            .map_err(|e| Error::io(path, e));
    }
    write_csv(rows, path)
}

pub fn read_bench_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
    read_csv(path.as_ref())
}
