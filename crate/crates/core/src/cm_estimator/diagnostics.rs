use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use super::Chain;
use crate::error::{Error, Result};

/// Split-R̂ above this value flags a coordinate as not converged.
pub const R_HAT_THRESHOLD: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnostics {
    /// Effective sample size per coordinate, pooled over chains.
    pub ess: Vec<f64>,
    /// Split-R̂ per coordinate; `None` for a single chain, NaN where degenerate.
    pub r_hat: Option<Vec<f64>>,
    /// Coordinates whose samples have zero variance.
    pub degenerate: Vec<bool>,
    /// Coordinates with R̂ above [`R_HAT_THRESHOLD`].
    pub flagged: Vec<usize>,
}

impl Diagnostics {
    /// No coordinate flagged and none degenerate.
    pub fn passed(&self) -> bool {
        self.flagged.is_empty() && !self.degenerate.iter().any(|&d| d)
    }

    pub fn max_r_hat(&self) -> Option<f64> {
        self.r_hat.as_ref().map(|r| {
            r.iter()
                .copied()
                .filter(|x| !x.is_nan())
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-R̂ of equal-length sequences, each cut into two halves.
fn split_r_hat(seqs: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = seqs
        .iter()
        .flat_map(|s| {
            let h = s.len() / 2;
            [&s[..h], &s[s.len() - h..]]
        })
        .collect();
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = halves.iter().map(|h| variance(h)).sum::<f64>() / halves.len() as f64;
    let b_over_n = variance(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
fn effective_sample_size(seqs: &[Vec<f64>]) -> f64 {
    let m = seqs.len();
    let n = seqs[0].len();
    let total = (m * n) as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let autocov = |s: &[f64], mu: f64, lag: usize| -> f64 {
        s[..n - lag]
            .iter()
            .zip(&s[lag..])
            .map(|(a, b)| (a - mu) * (b - mu))
            .sum::<f64>()
            / n as f64
    };
    let acov0: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, &mu)| autocov(s, mu, 0))
        .collect();
    let nf = n as f64;
    let w = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    let rho = |lag: usize| -> f64 {
        let mean_acov = seqs
            .iter()
            .zip(&means)
            .map(|(s, &mu)| autocov(s, mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    // antithetic chains can give τ < 1; cap as Stan does
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// ESS and split-R̂ per coordinate. A single chain yields ESS only.
pub fn chain_diagnostics(chains: &[Chain]) -> Result<Diagnostics> {
    let first = chains.first().ok_or(Error::EmptySamples)?;
    if chains.iter().any(|c| c.is_empty()) {
        return Err(Error::EmptySamples);
    }
    let (dim, len) = (first.dim(), first.len());
    if chains.iter().any(|c| c.dim() != dim || c.len() != len) {
        return Err(Error::InvalidParameter(
            "chains must share dimension and length".into(),
        ));
    }
    if len < 4 {
        return Err(Error::InvalidParameter(
            "chains need at least four samples".into(),
        ));
    }
    let mut ess = Vec::with_capacity(dim);
    let mut degenerate = Vec::with_capacity(dim);
    let mut r_hat = Vec::with_capacity(dim);
    for i in 0..dim {
        let seqs: Vec<Vec<f64>> = chains.iter().map(|c| c.coordinate(i)).collect();
        let flat_var = {
            let all: Vec<f64> = seqs.iter().flatten().copied().collect();
            variance(&all)
        };
        // halves with zero within-variance make R̂ undefined as well
        let zero_within = seqs.iter().any(|s| {
            let h = s.len() / 2;
            variance(&s[..h]) == 0.0 || variance(&s[s.len() - h..]) == 0.0
        });
        if flat_var == 0.0 || zero_within {
            degenerate.push(true);
            ess.push((chains.len() * len) as f64);
            r_hat.push(f64::NAN);
            continue;
        }
        degenerate.push(false);
        ess.push(effective_sample_size(&seqs));
        r_hat.push(split_r_hat(&seqs));
    }
    let r_hat = (chains.len() >= 2).then_some(r_hat);
    let flagged = r_hat
        .as_ref()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, &x)| x > R_HAT_THRESHOLD)
                .map(|(i, _)| i)
                .collect()
        })
        .unwrap_or_default();
    Ok(Diagnostics {
        ess,
        r_hat,
        degenerate,
        flagged,
    })
}
