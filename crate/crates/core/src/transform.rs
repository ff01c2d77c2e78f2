//! Per-group PCA dictionaries and group coding.
//!
//! The dictionary is the complete eigenbasis of the group's mean-centred
//! covariance. Coding itself works on the raw, uncentred data: with a
//! complete orthonormal basis the mean is carried losslessly by the
//! coefficients.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::patching::PatchGroup;

/// Orthonormal `b x b` basis with eigenvectors in columns, ordered by
/// descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaDictionary {
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

/// `b x m` coefficient matrix of a group over a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCodes {
    pub coeffs: DMatrix<f64>,
}

impl GroupCodes {
    pub fn new(coeffs: DMatrix<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(b: usize, m: usize) -> Self {
        Self {
            coeffs: DMatrix::zeros(b, m),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs.shape()
    }
}

impl PcaDictionary {
    pub fn identity(b: usize) -> Self {
        Self {
            basis: DMatrix::identity(b, b),
            eigenvalues: vec![0.0; b],
        }
    }

    /// PCA basis of the columns of `data` (`b x m`, `m >= 1`).
    ///
    /// Each eigenvector is signed so that its largest-magnitude entry (first
    /// one on ties) is non-negative. Equal eigenvalues keep the solver's
    /// order, which is deterministic for identical input.
    pub fn from_data(data: &DMatrix<f64>) -> Result<Self> {
        let (b, m) = data.shape();
        if b == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!(
                "cannot build a PCA basis from a {b}x{m} group"
            )));
        }
        let mean = data.column_mean();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let mut cov = &centered * centered.transpose();
        cov /= m as f64;

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let mut basis = DMatrix::zeros(b, b);
        let mut eigenvalues = Vec::with_capacity(b);
        for (k, &src) in order.iter().enumerate() {
            let v = eig.eigenvectors.column(src);
            let mut pivot = 0;
            for i in 1..b {
                if v[i].abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            basis.column_mut(k).copy_from(&(v * sign));
            eigenvalues.push(eig.eigenvalues[src]);
        }
        Ok(Self { basis, eigenvalues })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Covariance eigenvalues matching the basis columns.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Patch length `b`.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }
}

pub fn build_pca_dictionary(group: &PatchGroup) -> Result<PcaDictionary> {
    PcaDictionary::from_data(&group.data)
}

/// `basis^T * data`.
pub fn encode(dict: &PcaDictionary, data: &DMatrix<f64>) -> Result<GroupCodes> {
    if data.nrows() != dict.dim() {
        return Err(Error::dims(
            (dict.dim(), data.ncols()),
            (data.nrows(), data.ncols()),
        ));
    }
    Ok(GroupCodes::new(dict.basis.tr_mul(data)))
}

/// `basis * coeffs`.
pub fn decode(dict: &PcaDictionary, codes: &GroupCodes) -> Result<DMatrix<f64>> {
    if codes.coeffs.nrows() != dict.dim() {
        return Err(Error::dims(
            (dict.dim(), codes.coeffs.ncols()),
            codes.coeffs.shape(),
        ));
    }
    Ok(&dict.basis * &codes.coeffs)
}
