use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, check_finite, Error, Result};

/// Tolerance on the tap sum of a blur kernel.
const KERNEL_SUM_TOL: f64 = 1e-12;

/// Linear forward operator `K: R^n -> R^m`.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOperator {
    Identity {
        dim: usize,
    },
    /// Row-major `rows x cols` matrix.
    Dense {
        rows: usize,
        cols: usize,
        entries: Vec<f64>,
    },
    /// Centred periodic convolution with a nonnegative kernel whose taps sum to one.
    Convolution1d {
        dim: usize,
        kernel: Vec<f64>,
    },
}

impl ForwardOperator {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "operator dimension must be positive".into(),
            ));
        }
        Ok(Self::Identity { dim })
    }

    pub fn dense(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(
                "matrix dimensions must be positive".into(),
            ));
        }
        check_dim(rows * cols, entries.len())?;
        check_finite(&entries)?;
        Ok(Self::Dense {
            rows,
            cols,
            entries,
        })
    }

    pub fn convolution1d(dim: usize, kernel: Vec<f64>) -> Result<Self> {
        if dim == 0 || kernel.is_empty() {
            return Err(Error::InvalidParameter(
                "convolution needs a positive dimension and at least one tap".into(),
            ));
        }
        if kernel.len() > dim {
            return Err(Error::InvalidParameter(format!(
                "kernel length {} exceeds signal length {dim}",
                kernel.len()
            )));
        }
        check_finite(&kernel)?;
        if kernel.iter().any(|&k| k < 0.0) {
            return Err(Error::InvalidParameter(
                "blur kernel taps must be nonnegative".into(),
            ));
        }
        let sum: f64 = kernel.iter().sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "blur kernel taps must sum to 1 (got {sum})"
            )));
        }
        Ok(Self::Convolution1d { dim, kernel })
    }

    /// Dimension `n` of the unknown.
    pub fn input_dim(&self) -> usize {
        match self {
            Self::Identity { dim } | Self::Convolution1d { dim, .. } => *dim,
            Self::Dense { cols, .. } => *cols,
        }
    }

    /// Dimension `m` of the data.
    pub fn output_dim(&self) -> usize {
        match self {
            Self::Identity { dim } | Self::Convolution1d { dim, .. } => *dim,
            Self::Dense { rows, .. } => *rows,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity { .. })
    }

    /// Every matrix entry of `K` is `>= 0`.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            Self::Identity { .. } | Self::Convolution1d { .. } => true,
            Self::Dense { entries, .. } => entries.iter().all(|&x| x >= 0.0),
        }
    }

    /// Returns `K u`. Convolution uses periodic boundaries.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), u.len())?;
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(u, &mut out);
        Ok(out)
    }

    /// Returns `Kᵀ v`.
    pub fn apply_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.output_dim(), v.len())?;
        let mut out = vec![0.0; self.input_dim()];
        self.apply_adjoint_into(v, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Self::Identity { .. } => out.copy_from_slice(u),
            Self::Dense { cols, entries, .. } => {
                for (o, row) in out.iter_mut().zip(entries.chunks_exact(*cols)) {
                    *o = row.iter().zip(u).map(|(a, b)| a * b).sum();
                }
            }
            Self::Convolution1d { dim, kernel } => {
                let n = *dim;
                let c = (kernel.len() - 1) / 2;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = kernel
                        .iter()
                        .enumerate()
                        .map(|(j, k)| k * u[(i + c + n - j) % n])
                        .sum();
                }
            }
        }
    }

    pub(crate) fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Self::Identity { .. } => out.copy_from_slice(v),
            Self::Dense { cols, entries, .. } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (vi, row) in v.iter().zip(entries.chunks_exact(*cols)) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * vi;
                    }
                }
            }
            Self::Convolution1d { dim, kernel } => {
                let n = *dim;
                let c = (kernel.len() - 1) / 2;
                for (l, o) in out.iter_mut().enumerate() {
                    *o = kernel
                        .iter()
                        .enumerate()
                        .map(|(j, k)| k * v[(l + j + n - c) % n])
                        .sum();
                }
            }
        }
    }
}
