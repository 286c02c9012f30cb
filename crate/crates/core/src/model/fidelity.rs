use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use super::ForwardOperator;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::vecops::sign0;

/// Default floor on `(Ku)_i` for the Poisson fidelity.
pub const DEFAULT_POISSON_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FidelityKind {
    /// `‖Ku − f‖₂²`
    Gaussian,
    /// `Σ (Ku)_i − f_i log (Ku)_i + log Γ(f_i + 1)`
    Poisson,
    /// `‖Ku − f‖₁`
    Laplace,
}

/// Data fidelity `E(u; K, f) = G(Ku; f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fidelity {
    kind: FidelityKind,
    operator: ForwardOperator,
    data: Vec<f64>,
    poisson_floor: f64,
}

impl Fidelity {
    pub fn new(kind: FidelityKind, operator: ForwardOperator, data: Vec<f64>) -> Result<Self> {
        check_dim(operator.output_dim(), data.len())?;
        check_finite(&data)?;
        if kind == FidelityKind::Poisson && data.iter().any(|&f| f < 0.0) {
            return Err(Error::InvalidParameter(
                "Poisson data must be nonnegative".into(),
            ));
        }
        Ok(Self {
            kind,
            operator,
            data,
            poisson_floor: DEFAULT_POISSON_FLOOR,
        })
    }

    pub fn with_poisson_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidParameter(
                "Poisson floor must be positive".into(),
            ));
        }
        self.poisson_floor = floor;
        Ok(self)
    }

    pub fn kind(&self) -> FidelityKind {
        self.kind
    }

    pub fn operator(&self) -> &ForwardOperator {
        &self.operator
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn poisson_floor(&self) -> f64 {
        self.poisson_floor
    }

    pub fn dim(&self) -> usize {
        self.operator.input_dim()
    }

    /// Differentiable everywhere on its domain.
    pub fn is_smooth(&self) -> bool {
        self.kind != FidelityKind::Laplace
    }

    /// `Ku` after dimension and NaN checks.
    pub fn image(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), u.len())?;
        if u.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite);
        }
        self.operator.apply(u)
    }

    fn image_in_domain(&self, ku: &[f64]) -> bool {
        match self.kind {
            FidelityKind::Poisson => ku.iter().all(|&v| v >= self.poisson_floor),
            _ => ku.iter().all(|v| v.is_finite()),
        }
    }

    pub fn in_domain(&self, u: &[f64]) -> bool {
        self.image(u)
            .map(|ku| self.image_in_domain(&ku))
            .unwrap_or(false)
    }

    /// `G(v; f)` for a data-space point `v = Ku`; `+∞` outside the domain.
    pub fn value_at_image(&self, ku: &[f64]) -> f64 {
        if !self.image_in_domain(ku) {
            return f64::INFINITY;
        }
        let f = &self.data;
        match self.kind {
            FidelityKind::Gaussian => ku.iter().zip(f).map(|(v, y)| (v - y) * (v - y)).sum(),
            FidelityKind::Laplace => ku.iter().zip(f).map(|(v, y)| (v - y).abs()).sum(),
            FidelityKind::Poisson => ku
                .iter()
                .zip(f)
                .map(|(&v, &y)| {
                    let log_term = if y == 0.0 { 0.0 } else { y * v.ln() };
                    v - log_term + libm::lgamma(y + 1.0)
                })
                .sum(),
        }
    }

    /// `E(u; K, f)`; `+∞` outside the Poisson domain.
    pub fn value(&self, u: &[f64]) -> Result<f64> {
        let ku = self.image(u)?;
        Ok(self.value_at_image(&ku))
    }

    /// A subgradient `g ∈ ∂G(v; f)` in data space (`sign(0) = 0` for Laplace).
    pub fn data_subgradient(&self, ku: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data.len(), ku.len())?;
        if !self.image_in_domain(ku) {
            return Err(Error::OutsideDomain);
        }
        let f = &self.data;
        Ok(match self.kind {
            FidelityKind::Gaussian => ku.iter().zip(f).map(|(v, y)| 2.0 * (v - y)).collect(),
            FidelityKind::Laplace => ku.iter().zip(f).map(|(v, y)| sign0(v - y)).collect(),
            FidelityKind::Poisson => ku.iter().zip(f).map(|(v, y)| 1.0 - y / v).collect(),
        })
    }

    /// Composed subgradient `Kᵀ g` with `g ∈ ∂G(Ku; f)`.
    pub fn subgradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let ku = self.image(u)?;
        let g = self.data_subgradient(&ku)?;
        let mut out = vec![0.0; self.dim()];
        self.operator.apply_adjoint_into(&g, &mut out);
        Ok(out)
    }

    /// `true` when `u` sits on a kink of a Laplace fidelity.
    pub fn at_kink(&self, u: &[f64]) -> bool {
        if self.kind != FidelityKind::Laplace {
            return false;
        }
        self.image(u)
            .map(|ku| ku.iter().zip(&self.data).any(|(v, y)| v == y))
            .unwrap_or(false)
    }
}
