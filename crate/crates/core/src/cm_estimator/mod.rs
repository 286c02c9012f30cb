//! Conditional-mean estimation by MCMC with chain diagnostics, or by a
//! Gauss–Legendre quadrature oracle for dimension ≤ 3.

mod diagnostics;
mod quadrature;
mod sampler;

pub use diagnostics::{chain_diagnostics, Diagnostics, R_HAT_THRESHOLD};
pub use quadrature::{
    gauss_legendre, quadrature_posterior, Expectation, QuadratureConfig, QuadratureMeasure,
    MAX_QUADRATURE_DIM,
};
pub use sampler::{
    sample_posterior, sample_posterior_mala, sample_posterior_rwm, Chain, SamplerConfig,
    SamplerMethod,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CmEstimate {
    /// Pooled sample mean.
    pub mean: Vec<f64>,
    /// Monte Carlo standard error per coordinate, `sqrt(var / ESS)`.
    pub stderr: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Pools the chains into the CM estimate. With `require_converged`, flagged
/// or degenerate coordinates are an error.
pub fn cm_estimate(chains: &[Chain], require_converged: bool) -> Result<CmEstimate> {
    let diagnostics = chain_diagnostics(chains)?;
    if require_converged && !diagnostics.passed() {
        return Err(Error::NotConverged(format!(
            "max split-R̂ {:?}, flagged coordinates {:?}",
            diagnostics.max_r_hat(),
            diagnostics.flagged
        )));
    }
    let n = chains[0].dim();
    let count = chains.iter().map(Chain::len).sum::<usize>() as f64;
    let mut mean = vec![0.0; n];
    for s in chains.iter().flat_map(Chain::samples) {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; n];
    for s in chains.iter().flat_map(Chain::samples) {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let stderr = var
        .iter()
        .zip(&diagnostics.ess)
        .map(|(v, ess)| (v / (count - 1.0) / ess).sqrt())
        .collect();
    Ok(CmEstimate {
        mean,
        stderr,
        diagnostics,
    })
}
