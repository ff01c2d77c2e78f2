//! Group sparsity residual core: non-local weights, reference codes,
//! adaptive thresholds, residual shrinkage and the noise-level schedule.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::image::{mse, GrayImage};
use crate::patching::PatchGroup;
use crate::transform::GroupCodes;

/// Non-negative weights over the members of a group, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NlWeights {
    values: Vec<f64>,
}

impl NlWeights {
    /// `exp(-d_j / h)` normalized to sum to one, where `d_j` are squared
    /// distances to the anchor.
    ///
    /// The exponent is shifted by the smallest distance before
    /// exponentiating, which leaves the normalized weights unchanged and
    /// keeps the largest raw weight at exactly 1.
    pub fn from_sq_distances(sq_distances: &[f64], h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("h must be > 0, got {h}")));
        }
        if sq_distances.is_empty() {
            return Err(Error::InvalidParameter("no group members".to_string()));
        }
        let dmin = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
        let raw: Vec<f64> = sq_distances.iter().map(|&d| (-(d - dmin) / h).exp()).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            values: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            values: vec![1.0 / m as f64; m],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Weights from the block-matching distances stored in the group.
pub fn compute_weights(group: &PatchGroup, h: f64) -> Result<NlWeights> {
    NlWeights::from_sq_distances(&group.distances, h)
}

/// Weights on the per-pixel squared distance `d_j / b` with bandwidth `h^2`,
/// i.e. `exp(-d_j / (b h^2))`. This is the scaling the denoiser uses: it
/// makes `h` a pixel-intensity scale independent of the patch size.
pub fn compute_pixel_weights(group: &PatchGroup, h: f64) -> Result<NlWeights> {
    let b = group.patch_len() as f64;
    let per_pixel: Vec<f64> = group.distances.iter().map(|d| d / b).collect();
    NlWeights::from_sq_distances(&per_pixel, h * h)
}

/// Weighted average of the code columns, replicated `m` times.
pub fn estimate_reference(codes: &GroupCodes, weights: &NlWeights) -> Result<GroupCodes> {
    let (b, m) = codes.shape();
    if weights.len() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m} weights"),
            actual: format!("{} weights", weights.len()),
        });
    }
    let mut beta = nalgebra::DVector::zeros(b);
    for (j, &w) in weights.values().iter().enumerate() {
        beta.axpy(w, &codes.coeffs.column(j), 1.0);
    }
    let mut out = GroupCodes::zeros(b, m);
    for mut col in out.coeffs.column_iter_mut() {
        col.copy_from(&beta);
    }
    Ok(out)
}

/// Population variance of all entries of `codes - reference`.
pub fn residual_variance(codes: &GroupCodes, reference: &GroupCodes) -> Result<f64> {
    if codes.shape() != reference.shape() {
        return Err(Error::dims(codes.shape(), reference.shape()));
    }
    let n = codes.coeffs.len() as f64;
    let residual = &codes.coeffs - &reference.coeffs;
    let mean = residual.sum() / n;
    Ok(residual.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n)
}

/// `c * 2 * sqrt(2) * sigma^2 / (delta + epsilon)`.
pub fn threshold_formula(sigma_iter: f64, delta: f64, c: f64, epsilon: f64) -> f64 {
    c * 2.0 * SQRT_2 * sigma_iter * sigma_iter / (delta + epsilon)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )))
    }
}

/// Single regularization weight for a whole group, with `delta` the
/// residual variance (see [`residual_variance`]).
pub fn estimate_group_lambda(
    codes: &GroupCodes,
    reference: &GroupCodes,
    sigma_iter: f64,
    c: f64,
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let delta = residual_variance(codes, reference)?;
    Ok(threshold_formula(sigma_iter, delta, c, epsilon))
}

/// Per-coefficient thresholds used by the denoiser, one per dictionary atom.
///
/// For atom `r`, `delta_r = sqrt(max(mean_j (g_rj - beta_rj)^2 - sigma^2, 0))`
/// estimates the standard deviation of the clean part of the residual: the
/// raw second moment includes `sigma^2` of noise, which is subtracted. The
/// threshold is then `threshold_formula(sigma, delta_r, c, epsilon)`, so
/// atoms whose residual is pure noise get a large threshold and atoms with
/// real signal deviation get a small one.
pub fn row_thresholds(
    codes: &GroupCodes,
    reference: &GroupCodes,
    sigma_iter: f64,
    c: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    if codes.shape() != reference.shape() {
        return Err(Error::dims(codes.shape(), reference.shape()));
    }
    let m = codes.coeffs.ncols() as f64;
    let noise = sigma_iter * sigma_iter;
    Ok((0..codes.coeffs.nrows())
        .map(|r| {
            let second_moment = codes
                .coeffs
                .row(r)
                .iter()
                .zip(reference.coeffs.row(r).iter())
                .map(|(g, beta)| (g - beta) * (g - beta))
                .sum::<f64>()
                / m;
            let delta = (second_moment - noise).max(0.0).sqrt();
            threshold_formula(sigma_iter, delta, c, epsilon)
        })
        .collect())
}

/// Threshold inputs for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkParams {
    pub lambda: f64,
    pub sigma_iter: f64,
    pub c: f64,
    pub epsilon: f64,
}

impl ShrinkParams {
    pub fn for_group(
        codes: &GroupCodes,
        reference: &GroupCodes,
        sigma_iter: f64,
        c: f64,
        epsilon: f64,
    ) -> Result<Self> {
        Ok(Self {
            lambda: estimate_group_lambda(codes, reference, sigma_iter, c, epsilon)?,
            sigma_iter,
            c,
            epsilon,
        })
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Elementwise minimizer of `(g - a)^2 + lambda * |a - beta|`, which is
/// `soft(g - beta, lambda / 2) + beta`.
pub fn shrink(codes: &GroupCodes, reference: &GroupCodes, lambda: f64) -> Result<GroupCodes> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    shrink_rows(codes, reference, &vec![0.5 * lambda; codes.coeffs.nrows()])
}

/// `soft(g - beta, t_r) + beta` with threshold `t_r` on row `r`.
pub fn shrink_rows(codes: &GroupCodes, reference: &GroupCodes, thresholds: &[f64]) -> Result<GroupCodes> {
    if codes.shape() != reference.shape() {
        return Err(Error::dims(codes.shape(), reference.shape()));
    }
    if thresholds.len() != codes.coeffs.nrows() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} thresholds", codes.coeffs.nrows()),
            actual: format!("{} thresholds", thresholds.len()),
        });
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "thresholds must be >= 0, got {t}"
        )));
    }
    let mut coeffs = codes.coeffs.clone();
    for (r, &t) in thresholds.iter().enumerate() {
        for (g, &beta) in coeffs.row_mut(r).iter_mut().zip(reference.coeffs.row(r).iter()) {
            // g - t * sign(g - beta) outside the dead zone equals
            // soft(g - beta, t) + beta without the cancellation error
            let d = *g - beta;
            *g = if d.abs() <= t { beta } else { *g - t.copysign(d) };
        }
    }
    Ok(GroupCodes::new(coeffs))
}

/// `eta * sqrt(max(sigma_noise^2 - MSE(noisy, prev_estimate), 0))`.
pub fn update_sigma(sigma_noise: f64, noisy: &GrayImage, prev_estimate: &GrayImage, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be > 0, got {eta}")));
    }
    let diff = mse(noisy, prev_estimate)?;
    Ok(sigma_from_mse(sigma_noise, diff, eta))
}

pub(crate) fn sigma_from_mse(sigma_noise: f64, mse: f64, eta: f64) -> f64 {
    let remaining = sigma_noise * sigma_noise - mse;
    if remaining > 0.0 {
        eta * remaining.sqrt()
    } else {
        0.0
    }
}

/// Pixelwise `prev_estimate + gamma * (noisy_orig - prev_input)`.
pub fn iterate_regularize(
    prev_estimate: &GrayImage,
    noisy_orig: &GrayImage,
    prev_input: &GrayImage,
    gamma: f64,
) -> Result<GrayImage> {
    prev_estimate.ensure_same_dims(noisy_orig)?;
    prev_estimate.ensure_same_dims(prev_input)?;
    let pixels = prev_estimate
        .pixels()
        .iter()
        .zip(noisy_orig.pixels())
        .zip(prev_input.pixels())
        .map(|((&y, &z), &zp)| y + gamma * (z - zp))
        .collect();
    GrayImage::new(prev_estimate.width(), prev_estimate.height(), pixels)
}
