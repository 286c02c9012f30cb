use alloc::vec::Vec;

use super::{Fidelity, Prior};
use crate::error::{check_dim, Error, Result};

/// Unnormalized posterior `p(u|f) ∝ exp(−E(u; K, f) − α R(u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    fidelity: Fidelity,
    prior: Prior,
    alpha: f64,
}

/// Gradient of the log posterior together with a flag telling whether a
/// subgradient selection (`sign(0) = 0`) was used at a kink.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGradient {
    pub gradient: Vec<f64>,
    pub at_kink: bool,
}

impl Posterior {
    pub fn new(fidelity: Fidelity, prior: Prior, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        Ok(Self {
            fidelity,
            prior,
            alpha,
        })
    }

    pub fn fidelity(&self) -> &Fidelity {
        &self.fidelity
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.fidelity.dim()
    }

    /// Both terms differentiable (Gaussian/Poisson fidelity with a Tikhonov or Huber-TV prior).
    pub fn is_smooth(&self) -> bool {
        self.fidelity.is_smooth() && self.prior.is_smooth()
    }

    pub fn in_domain(&self, u: &[f64]) -> bool {
        self.fidelity.in_domain(u)
    }

    /// `E(u) + α R(u)`; `+∞` outside the domain.
    pub fn objective(&self, u: &[f64]) -> Result<f64> {
        let e = self.fidelity.value(u)?;
        if e == f64::INFINITY {
            return Ok(e);
        }
        Ok(e + self.alpha * self.prior.value(u)?)
    }

    /// `−E(u) − α R(u)`; `−∞` outside the domain.
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        Ok(-self.objective(u)?)
    }

    /// `−Kᵀ g − α p` with `g ∈ ∂G(Ku; f)` and `p ∈ ∂R(u)`.
    pub fn log_density_gradient(&self, u: &[f64]) -> Result<LogGradient> {
        check_dim(self.dim(), u.len())?;
        let q = self.fidelity.subgradient(u)?;
        let p = self.prior.subgradient(u)?;
        let gradient = q.iter().zip(&p).map(|(a, b)| -a - self.alpha * b).collect();
        Ok(LogGradient {
            gradient,
            at_kink: self.fidelity.at_kink(u) || self.prior.at_kink(u),
        })
    }
}
