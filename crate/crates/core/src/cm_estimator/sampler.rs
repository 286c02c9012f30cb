use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::map_solver::{solve_map, SolverConfig};
use crate::model::Posterior;
use crate::rng::StreamSeed;

/// Acceptance rates outside this range after adaptation raise a warning.
const HEALTHY_ACCEPTANCE: (f64, f64) = (0.05, 0.8);
/// Largest MALA drift, in proposal standard deviations.
const DRIFT_CAP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SamplerMethod {
    /// Random-walk Metropolis with an isotropic Gaussian proposal.
    Rwm,
    /// Metropolis-adjusted Langevin; needs a smooth posterior.
    Mala,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerConfig {
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thinning`-th post-burn-in state.
    pub thinning: usize,
    /// Target acceptance band for burn-in adaptation.
    pub acceptance_window: (f64, f64),
    /// Proposal scale (RWM standard deviation, MALA step) before adaptation.
    pub initial_scale: f64,
    /// Starting point; defaults to the MAP estimate.
    pub initial: Option<Vec<f64>>,
    /// Burn-in iterations per adaptation batch.
    pub adapt_interval: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: 10_000,
            thinning: 5,
            acceptance_window: (0.2, 0.4),
            initial_scale: 1.0,
            initial: None,
            adapt_interval: 50,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.acceptance_window;
        if !(self.initial_scale > 0.0 && self.initial_scale.is_finite()) {
            return Err(Error::Config("proposal scale must be positive".into()));
        }
        if self.thinning == 0 || self.adapt_interval == 0 {
            return Err(Error::Config(
                "thinning and adaptation interval must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be shorter than the chain ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(
                "acceptance window must satisfy 0 < lo < hi < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Post-burn-in, thinned MCMC trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Chain {
    dim: usize,
    samples: Vec<f64>,
    pub seed: StreamSeed,
    pub method: SamplerMethod,
    /// Accepted proposals after burn-in.
    pub accepted: usize,
    /// Proposals made after burn-in.
    pub proposed: usize,
    pub acceptance_rate: f64,
    /// Frozen proposal scale used after burn-in.
    pub proposal_scale: f64,
    pub burn_in: usize,
    pub thinning: usize,
    /// Set when the post-burn-in acceptance rate is outside `[0.05, 0.8]`.
    pub warning: Option<String>,
}

impl Chain {
    /// Builds a chain from raw samples, mainly for diagnostics on synthetic data.
    pub fn from_samples(dim: usize, samples: Vec<f64>, seed: StreamSeed) -> Result<Self> {
        if dim == 0 || !samples.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(
                "sample buffer is not a whole number of states".into(),
            ));
        }
        Ok(Self {
            dim,
            samples,
            seed,
            method: SamplerMethod::Rwm,
            accepted: 0,
            proposed: 0,
            acceptance_rate: 0.0,
            proposal_scale: 0.0,
            burn_in: 0,
            thinning: 1,
            warning: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.samples[k * self.dim..(k + 1) * self.dim]
    }

    pub fn samples(&self) -> core::slice::ChunksExact<'_, f64> {
        self.samples.chunks_exact(self.dim)
    }

    /// Flattened row-major sample buffer.
    pub fn raw(&self) -> &[f64] {
        &self.samples
    }

    /// Trace of coordinate `i`.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.samples().map(|s| s[i]).collect()
    }
}

struct State {
    x: Vec<f64>,
    log_p: f64,
    /// Gradient of the log density (MALA only).
    grad: Vec<f64>,
}

fn evaluate(post: &Posterior, x: Vec<f64>, with_grad: bool) -> Result<Option<State>> {
    let log_p = post.log_density(&x)?;
    if !log_p.is_finite() {
        return Ok(None);
    }
    let grad = if with_grad {
        post.log_density_gradient(&x)?.gradient
    } else {
        Vec::new()
    };
    Ok(Some(State { x, log_p, grad }))
}

/// Langevin drift `½ h ∇log p`, truncated to `DRIFT_CAP` proposal standard
/// deviations. Near a Poisson boundary the raw gradient blows up and the
/// untruncated chain almost never re-enters the boundary layer.
fn drift(state: &State, step: f64) -> Vec<f64> {
    let h = step * step;
    let norm = state.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let raw = 0.5 * h * norm;
    let shrink = if raw > DRIFT_CAP * step {
        DRIFT_CAP * step / raw
    } else {
        1.0
    };
    state.grad.iter().map(|g| 0.5 * h * g * shrink).collect()
}

/// `log q(to | from)` for the MALA proposal, up to a constant shared by both directions.
fn mala_log_q(to: &[f64], from: &State, step: f64) -> f64 {
    let h = step * step;
    to.iter()
        .zip(&from.x)
        .zip(drift(from, step))
        .map(|((t, f), d)| {
            let r = t - f - d;
            -r * r / (2.0 * h)
        })
        .sum()
}

/// Draws a chain with the given method. Deterministic in `(post, cfg, seed)`.
pub fn sample_posterior(
    post: &Posterior,
    method: SamplerMethod,
    cfg: &SamplerConfig,
    seed: StreamSeed,
) -> Result<Chain> {
    cfg.validate()?;
    let mala = method == SamplerMethod::Mala;
    if mala && !post.is_smooth() {
        return Err(Error::Config(
            "MALA needs a smooth posterior (Gaussian/Poisson fidelity with Tikhonov/Huber-TV prior)".into(),
        ));
    }
    let n = post.dim();
    let x0 = match &cfg.initial {
        Some(x) => {
            check_dim(n, x.len())?;
            x.clone()
        }
        None => solve_map(post, &SolverConfig::default())?.estimate,
    };
    let mut state = evaluate(post, x0, mala)?.ok_or(Error::OutsideDomain)?;

    let mut rng = seed.rng();
    let (lo, hi) = cfg.acceptance_window;
    let mid = 0.5 * (lo + hi);
    let mut log_scale = cfg.initial_scale.ln();
    let mut batch_accepted = 0usize;
    let mut batch_len = 0usize;
    let mut batches = 0usize;
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut samples = Vec::with_capacity((cfg.iterations - cfg.burn_in) / cfg.thinning * n + n);
    let mut noise = vec![0.0; n];

    for it in 0..cfg.iterations {
        let scale = log_scale.exp();
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let proposal: Vec<f64> = if mala {
            state
                .x
                .iter()
                .zip(drift(&state, scale))
                .zip(&noise)
                .map(|((x, d), z)| x + d + scale * z)
                .collect()
        } else {
            state
                .x
                .iter()
                .zip(&noise)
                .map(|(x, z)| x + scale * z)
                .collect()
        };
        let uniform: f64 = rng.random();

        let accept = match evaluate(post, proposal, mala)? {
            None => None,
            Some(cand) => {
                let mut log_ratio = cand.log_p - state.log_p;
                if mala {
                    log_ratio +=
                        mala_log_q(&state.x, &cand, scale) - mala_log_q(&cand.x, &state, scale);
                }
                (uniform.ln() < log_ratio).then_some(cand)
            }
        };
        let was_accepted = accept.is_some();
        if let Some(cand) = accept {
            state = cand;
        }

        if it < cfg.burn_in {
            batch_len += 1;
            batch_accepted += usize::from(was_accepted);
            if batch_len == cfg.adapt_interval {
                let rate = batch_accepted as f64 / batch_len as f64;
                batches += 1;
                // diminishing gain, so the frozen scale does not hinge on the last batch
                if rate < lo || rate > hi {
                    log_scale += 2.0 * (rate - mid) / (batches as f64).sqrt();
                }
                batch_len = 0;
                batch_accepted = 0;
            }
        } else {
            proposed += 1;
            accepted += usize::from(was_accepted);
            if (it - cfg.burn_in).is_multiple_of(cfg.thinning) {
                samples.extend_from_slice(&state.x);
            }
        }
    }

    let acceptance_rate = accepted as f64 / proposed as f64;
    let warning =
        (!(HEALTHY_ACCEPTANCE.0..=HEALTHY_ACCEPTANCE.1).contains(&acceptance_rate)).then(|| {
            format!("acceptance rate {acceptance_rate:.3} outside [0.05, 0.8] after adaptation")
        });
    Ok(Chain {
        dim: n,
        samples,
        seed,
        method,
        accepted,
        proposed,
        acceptance_rate,
        proposal_scale: log_scale.exp(),
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        warning,
    })
}

pub fn sample_posterior_rwm(
    post: &Posterior,
    cfg: &SamplerConfig,
    seed: StreamSeed,
) -> Result<Chain> {
    sample_posterior(post, SamplerMethod::Rwm, cfg, seed)
}

pub fn sample_posterior_mala(
    post: &Posterior,
    cfg: &SamplerConfig,
    seed: StreamSeed,
) -> Result<Chain> {
    sample_posterior(post, SamplerMethod::Mala, cfg, seed)
}
