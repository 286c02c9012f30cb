//! Empirical Bayes costs `BC_C(û) = E[C(û, u)]` over MCMC chains or a
//! quadrature measure, and their minimization over the estimate `û`.
//!
//! Samples whose cost is infinite (a Poisson sample on the domain floor) are
//! dropped and counted; the remaining weights are renormalized.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::bregman::{clip, ConvexFunctional, CostFunctional, CostKind};
use crate::cm_estimator::{chain_diagnostics, Chain, QuadratureMeasure};
use crate::error::{check_dim, Error, Result};
use crate::rng::StreamSeed;

/// Excluded fraction above which a warning is attached.
const EXCLUSION_WARNING_FRACTION: f64 = 0.01;

/// Where posterior samples come from.
#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    /// Equally weighted MCMC samples; standard errors use the chains' ESS.
    Chains(&'a [Chain]),
    /// Weighted quadrature nodes; standard errors are zero.
    Quadrature(&'a QuadratureMeasure),
}

impl SampleSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Chains(c) => c.first().map(Chain::dim).unwrap_or(0),
            Self::Quadrature(q) => q.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Chains(c) => c.iter().map(Chain::len).sum(),
            Self::Quadrature(q) => q.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits `(sample, weight, chain index)` in a fixed order.
    fn for_each<F: FnMut(&[f64], f64, usize)>(&self, mut f: F) {
        match self {
            Self::Chains(chains) => {
                let w = 1.0 / self.len() as f64;
                for (k, c) in chains.iter().enumerate() {
                    for s in c.samples() {
                        f(s, w, k);
                    }
                }
            }
            Self::Quadrature(q) => {
                for (x, w) in q.iter() {
                    f(x, w, 0);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Samples that contributed.
    pub sample_count: usize,
    /// Samples dropped for an infinite cost.
    pub excluded_count: usize,
    /// Set when more than 1% of the samples (or quadrature mass) was excluded.
    pub exclusion_warning: Option<String>,
}

/// Weighted average of a vector-valued per-sample quantity.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleAverage {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sample_count: usize,
    pub excluded_count: usize,
    /// Weight fraction of excluded samples.
    pub excluded_fraction: f64,
}

/// Averages `values` (`len × width`, row per sample in source order),
/// skipping rows with a non-finite entry.
fn summarize(source: &SampleSource<'_>, values: &[f64], width: usize) -> Result<SampleAverage> {
    let mut mean = vec![0.0; width];
    let mut kept_weight = 0.0;
    let mut total_weight = 0.0;
    let mut kept = 0usize;
    let mut excluded = 0usize;
    // retained rows per chain, for the ESS computation
    let mut per_chain: Vec<Vec<f64>> = Vec::new();
    let mut row = 0usize;
    source.for_each(|_, w, chain| {
        let v = &values[row * width..(row + 1) * width];
        row += 1;
        total_weight += w;
        if v.iter().any(|x| !x.is_finite()) {
            excluded += 1;
            return;
        }
        kept += 1;
        kept_weight += w;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += w * x;
        }
        if matches!(source, SampleSource::Chains(_)) {
            if per_chain.len() <= chain {
                per_chain.resize(chain + 1, Vec::new());
            }
            per_chain[chain].extend_from_slice(v);
        }
    });
    if kept == 0 {
        return Err(Error::EmptySamples);
    }
    mean.iter_mut().for_each(|m| *m /= kept_weight);

    let stderr = match source {
        SampleSource::Quadrature(_) => vec![0.0; width],
        SampleSource::Chains(_) => chain_stderr(&per_chain, width, &mean, kept)?,
    };
    Ok(SampleAverage {
        mean,
        stderr,
        sample_count: kept,
        excluded_count: excluded,
        excluded_fraction: 1.0 - kept_weight / total_weight,
    })
}

/// `sqrt(var / ESS)` per component, with ESS from the retained rows of
/// each chain truncated to a common length.
fn chain_stderr(
    per_chain: &[Vec<f64>],
    width: usize,
    mean: &[f64],
    kept: usize,
) -> Result<Vec<f64>> {
    let mut var = vec![0.0; width];
    for rows in per_chain {
        for r in rows.chunks_exact(width) {
            for ((v, x), m) in var.iter_mut().zip(r).zip(mean) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let denom = (kept as f64 - 1.0).max(1.0);
    var.iter_mut().for_each(|v| *v /= denom);

    let common = per_chain.iter().map(|r| r.len() / width).min().unwrap_or(0);
    let ess = if common >= 4 {
        let chains: Vec<Chain> = per_chain
            .iter()
            .map(|r| {
                Chain::from_samples(width, r[..common * width].to_vec(), StreamSeed::default())
            })
            .collect::<Result<_>>()?;
        chain_diagnostics(&chains)?.ess
    } else {
        vec![kept as f64; width]
    };
    Ok(var
        .iter()
        .zip(&ess)
        .map(|(v, e)| if *v == 0.0 { 0.0 } else { (v / e).sqrt() })
        .collect())
}

fn to_estimate(avg: SampleAverage) -> CostEstimate {
    let exclusion_warning = (avg.excluded_fraction > EXCLUSION_WARNING_FRACTION).then(|| {
        format!(
            "{} samples ({:.2}% of the weight) excluded for infinite cost",
            avg.excluded_count,
            100.0 * avg.excluded_fraction
        )
    });
    CostEstimate {
        value: avg.mean[0],
        stderr: avg.stderr[0],
        sample_count: avg.sample_count,
        excluded_count: avg.excluded_count,
        exclusion_warning,
    }
}

/// Sample average of a vector-valued function, with per-component stderr.
pub fn sample_average<G>(source: &SampleSource<'_>, mut g: G) -> Result<SampleAverage>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if source.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut values = Vec::new();
    let mut width = None;
    let mut err = None;
    source.for_each(|x, _, _| {
        if err.is_some() {
            return;
        }
        match g(x) {
            Ok(v) => {
                let w = *width.get_or_insert(v.len());
                if v.len() != w {
                    err = Some(Error::DimensionMismatch {
                        expected: w,
                        got: v.len(),
                    });
                }
                values.extend(v);
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    summarize(source, &values, width.unwrap_or(0))
}

/// `E[∂F(u)]` with the functional's own subgradient selection; samples
/// outside the domain of `F` are skipped.
pub fn average_subgradient<F: ConvexFunctional + ?Sized>(
    functional: &F,
    source: &SampleSource<'_>,
) -> Result<SampleAverage> {
    let n = source.dim();
    sample_average(source, |u| match functional.subgradient(u) {
        Ok(q) => Ok(q),
        Err(Error::OutsideDomain) => Ok(vec![f64::NAN; n]),
        Err(e) => Err(e),
    })
}

/// A cost functional bound to a sample set, with every sample-side quantity
/// (`F_i(u)` and, for MAP-oriented costs, `q_i(u)`) computed once.
#[derive(Debug, Clone)]
pub struct EmpiricalCost<'a> {
    cost: &'a CostFunctional,
    source: SampleSource<'a>,
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    /// `F_i(u_s)` laid out `[sample][term]`; `+∞` marks an excluded sample.
    sample_values: Vec<f64>,
    /// `q_i(u_s)` laid out `[sample][term][coordinate]` (MAP-oriented costs only).
    sample_subgradients: Vec<f64>,
}

impl<'a> EmpiricalCost<'a> {
    pub fn new(cost: &'a CostFunctional, source: SampleSource<'a>) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::EmptySamples);
        }
        let dim = source.dim();
        let n_terms = cost.terms().len();
        let map_kind = cost.kind() == CostKind::MapCost;
        let mut points = Vec::with_capacity(source.len() * dim);
        let mut weights = Vec::with_capacity(source.len());
        let mut sample_values = Vec::with_capacity(source.len() * n_terms);
        let mut sample_subgradients = Vec::new();
        let mut err = None;
        source.for_each(|u, w, _| {
            if err.is_some() {
                return;
            }
            points.extend_from_slice(u);
            weights.push(w);
            for term in cost.terms() {
                let fu = match term.functional.value(u) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        return;
                    }
                };
                sample_values.push(fu);
                if map_kind {
                    if fu.is_finite() {
                        match term.functional.subgradient(u) {
                            Ok(q) => sample_subgradients.extend(q),
                            Err(e) => {
                                err = Some(e);
                                return;
                            }
                        }
                    } else {
                        sample_subgradients.extend(core::iter::repeat_n(0.0, dim));
                    }
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Self {
            cost,
            source,
            dim,
            points,
            weights,
            sample_values,
            sample_subgradients,
        })
    }

    pub fn source(&self) -> &SampleSource<'a> {
        &self.source
    }

    /// Per-sample costs `C(û, u_s)` in source order (`+∞` for excluded
    /// samples); `None` when `û` is outside a term's domain.
    pub fn per_sample(&self, estimate: &[f64]) -> Result<Option<Vec<f64>>> {
        check_dim(self.dim, estimate.len())?;
        let prepared = self.prepare_estimate(estimate)?;
        let Some(prepared) = prepared else {
            return Ok(None);
        };
        Ok(Some(
            (0..self.weights.len())
                .map(|s| self.sample_cost(s, estimate, &prepared))
                .collect(),
        ))
    }

    /// Empirical Bayes cost at `û` without a standard error; `+∞` when `û`
    /// is infeasible or every sample is excluded.
    pub fn value(&self, estimate: &[f64]) -> Result<f64> {
        check_dim(self.dim, estimate.len())?;
        let Some(prepared) = self.prepare_estimate(estimate)? else {
            return Ok(f64::INFINITY);
        };
        let mut total = 0.0;
        let mut weight = 0.0;
        for (s, w) in self.weights.iter().enumerate() {
            let c = self.sample_cost(s, estimate, &prepared);
            if c.is_finite() {
                total += w * c;
                weight += w;
            }
        }
        Ok(if weight > 0.0 {
            total / weight
        } else {
            f64::INFINITY
        })
    }

    /// Empirical Bayes cost with its standard error.
    pub fn estimate(&self, estimate: &[f64]) -> Result<CostEstimate> {
        match self.per_sample(estimate)? {
            None => Ok(CostEstimate {
                value: f64::INFINITY,
                stderr: 0.0,
                sample_count: 0,
                excluded_count: self.weights.len(),
                exclusion_warning: Some("estimate outside the domain of the cost".into()),
            }),
            Some(values) => Ok(to_estimate(summarize(&self.source, &values, 1)?)),
        }
    }

    /// `(F_i(û), q_i(û))` per term, the latter only for CM-oriented costs.
    fn prepare_estimate(&self, estimate: &[f64]) -> Result<Option<Vec<(f64, Vec<f64>)>>> {
        let mut out = Vec::with_capacity(self.cost.terms().len());
        for term in self.cost.terms() {
            let v = term.functional.value(estimate)?;
            if !v.is_finite() {
                return Ok(None);
            }
            let q = match self.cost.kind() {
                CostKind::CmCost => term.functional.subgradient(estimate)?,
                CostKind::MapCost => Vec::new(),
            };
            out.push((v, q));
        }
        Ok(Some(out))
    }

    fn sample_cost(&self, s: usize, estimate: &[f64], prepared: &[(f64, Vec<f64>)]) -> f64 {
        let n = self.dim;
        let n_terms = prepared.len();
        let u = &self.points[s * n..(s + 1) * n];
        let mut total = 0.0;
        for (i, (term, (f_est, q_est))) in self.cost.terms().iter().zip(prepared).enumerate() {
            let fu = self.sample_values[s * n_terms + i];
            if !fu.is_finite() {
                return f64::INFINITY;
            }
            if term.weight == 0.0 {
                continue;
            }
            let d = match self.cost.kind() {
                CostKind::CmCost => {
                    let lin: f64 = q_est
                        .iter()
                        .zip(u.iter().zip(estimate))
                        .map(|(q, (a, b))| q * (a - b))
                        .sum();
                    clip(fu - f_est - lin, fu, *f_est)
                }
                CostKind::MapCost => {
                    let off = (s * n_terms + i) * n;
                    let q = &self.sample_subgradients[off..off + n];
                    let lin: f64 = q
                        .iter()
                        .zip(estimate.iter().zip(u))
                        .map(|(q, (a, b))| q * (a - b))
                        .sum();
                    clip(f_est - fu - lin, *f_est, fu)
                }
            };
            total += term.weight * d;
        }
        total
    }
}

/// `E[C(û, u)]` over the samples, with a Monte Carlo standard error for chains.
///
/// An estimate outside the cost's domain yields `value = +∞`; if every
/// sample has infinite cost the result is [`Error::EmptySamples`].
pub fn estimate_bayes_cost(
    cost: &CostFunctional,
    estimate: &[f64],
    source: &SampleSource<'_>,
) -> Result<CostEstimate> {
    EmpiricalCost::new(cost, *source)?.estimate(estimate)
}

/// Paired estimate of `E[C_a(û_a, u) − C_b(û_b, u)]` over the same samples.
/// Samples infinite under either cost are excluded.
pub fn estimate_cost_difference(
    a: &EmpiricalCost<'_>,
    estimate_a: &[f64],
    b: &EmpiricalCost<'_>,
    estimate_b: &[f64],
) -> Result<CostEstimate> {
    let (Some(va), Some(vb)) = (a.per_sample(estimate_a)?, b.per_sample(estimate_b)?) else {
        return Err(Error::OutsideDomain);
    };
    check_dim(va.len(), vb.len())?;
    let diff: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
    Ok(to_estimate(summarize(a.source(), &diff, 1)?))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MinimizeConfig {
    /// Initial poll step of the compass search.
    pub initial_step: f64,
    /// The search stops once the step falls below this.
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            min_step: 1e-10,
            max_evaluations: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MinimizeResult {
    pub estimate: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub final_step: f64,
}

/// Minimizes the empirical Bayes cost over `û` by deterministic compass
/// search: poll `û ± s e_i`, move on strict improvement, halve `s` after a
/// sweep without one. Returns the best point found.
pub fn minimize_bayes_cost(
    empirical: &EmpiricalCost<'_>,
    init: &[f64],
    cfg: &MinimizeConfig,
) -> Result<MinimizeResult> {
    check_dim(empirical.dim, init.len())?;
    if !(cfg.initial_step > 0.0 && cfg.min_step > 0.0) {
        return Err(Error::Config(
            "compass search steps must be positive".into(),
        ));
    }
    let mut x = init.to_vec();
    let mut fx = empirical.value(&x)?;
    if !fx.is_finite() {
        return Err(Error::Diverged(
            "empirical Bayes cost is infinite at the initial point".into(),
        ));
    }
    let mut evaluations = 1;
    let mut step = cfg.initial_step;
    while step >= cfg.min_step && evaluations < cfg.max_evaluations {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += dir * step;
                let fy = empirical.value(&y)?;
                evaluations += 1;
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(MinimizeResult {
        estimate: x,
        value: fx,
        evaluations,
        final_step: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::CmPreset;
    use crate::cm_estimator::{quadrature_posterior, QuadratureConfig};
    use crate::model::{Fidelity, FidelityKind, ForwardOperator, Posterior, Prior};
    use approx::assert_abs_diff_eq;

    fn scalar(kind: FidelityKind, f: f64, prior: Prior) -> Posterior {
        let fid = Fidelity::new(kind, ForwardOperator::identity(1).unwrap(), vec![f]).unwrap();
        Posterior::new(fid, prior, 1.0).unwrap()
    }

    fn chain_of(points: &[f64]) -> Vec<Chain> {
        vec![Chain::from_samples(1, points.to_vec(), StreamSeed::default()).unwrap()]
    }

    #[test]
    fn mean_squared_at_sample_mean_is_total_variance() {
        let pts = [1.0, 2.0, 4.0, 5.0];
        let chains = chain_of(&pts);
        let src = SampleSource::Chains(&chains);
        let est = estimate_bayes_cost(&CostFunctional::mean_squared(), &[3.0], &src).unwrap();
        // population variance of the sample set
        assert_abs_diff_eq!(est.value, 2.5, epsilon = 1e-12);
        assert_eq!(est.sample_count, 4);
    }

    #[test]
    fn single_point_sample_has_zero_cost() {
        let post = scalar(FidelityKind::Poisson, 2.0, Prior::tikhonov());
        let chains = chain_of(&[1.3; 8]);
        let src = SampleSource::Chains(&chains);
        for cost in [
            CostFunctional::map_cost(&post),
            CostFunctional::cm_preset(&post, CmPreset::C3),
        ] {
            let e = estimate_bayes_cost(&cost, &[1.3], &src).unwrap();
            assert_eq!(e.value, 0.0);
            assert_eq!(e.stderr, 0.0);
        }
    }

    #[test]
    fn c2_tikhonov_at_mean_is_half_variance() {
        let post = scalar(FidelityKind::Gaussian, 3.0, Prior::tikhonov());
        let q = quadrature_posterior(&post, &QuadratureConfig::default()).unwrap();
        let src = SampleSource::Quadrature(&q);
        let cost = CostFunctional::cm_preset(&post, CmPreset::C2);
        let e = estimate_bayes_cost(&cost, &q.mean(), &src).unwrap();
        assert_abs_diff_eq!(e.value, 0.5 / 3.0, epsilon = 1e-10);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn minimizers_of_quadratic_costs_are_the_mean() {
        let pts = [0.5, 1.5, 2.0, 4.5, -1.0];
        let mean = pts.iter().sum::<f64>() / 5.0;
        let chains = chain_of(&pts);
        let src = SampleSource::Chains(&chains);
        let post = scalar(FidelityKind::Gaussian, 3.0, Prior::tikhonov());
        for cost in [
            CostFunctional::mean_squared(),
            CostFunctional::cm_preset(&post, CmPreset::C2),
        ] {
            let emp = EmpiricalCost::new(&cost, src).unwrap();
            let r = minimize_bayes_cost(&emp, &[0.0], &MinimizeConfig::default()).unwrap();
            assert_abs_diff_eq!(r.estimate[0], mean, epsilon = 1e-6);
        }
    }

    #[test]
    fn map_cost_minimizer_is_map_on_quadrature() {
        let post = scalar(FidelityKind::Gaussian, 3.0, Prior::tikhonov());
        let q = quadrature_posterior(&post, &QuadratureConfig::default()).unwrap();
        let cost = CostFunctional::map_cost(&post);
        let emp = EmpiricalCost::new(&cost, SampleSource::Quadrature(&q)).unwrap();
        let r = minimize_bayes_cost(&emp, &[0.0], &MinimizeConfig::default()).unwrap();
        assert_abs_diff_eq!(r.estimate[0], 2.0, epsilon = 1e-4);
    }

    #[test]
    fn average_subgradient_cases() {
        let chains = chain_of(&[0.5, 1.0, 3.0]);
        let src = SampleSource::Chains(&chains);
        let t = average_subgradient(&Prior::tikhonov(), &src).unwrap();
        assert_abs_diff_eq!(t.mean[0], 1.5, epsilon = 1e-15);
        let l = average_subgradient(&Prior::l1(), &src).unwrap();
        assert_eq!(l.mean, vec![1.0]);
    }

    #[test]
    fn infinite_costs_are_excluded_and_counted() {
        // sample at the Poisson floor: map_cost needs F(u) finite, the
        // sample below the floor is excluded
        let post = scalar(FidelityKind::Poisson, 2.0, Prior::tikhonov());
        let chains = chain_of(&[1.0, 1.5, 1e-12, 2.0]);
        let src = SampleSource::Chains(&chains);
        let e = estimate_bayes_cost(&CostFunctional::map_cost(&post), &[1.0], &src).unwrap();
        assert_eq!(e.excluded_count, 1);
        assert_eq!(e.sample_count, 3);
        assert!(e.exclusion_warning.is_some());

        let chains = chain_of(&[1e-12, 1e-11]);
        let src = SampleSource::Chains(&chains);
        assert_eq!(
            estimate_bayes_cost(&CostFunctional::map_cost(&post), &[1.0], &src),
            Err(Error::EmptySamples)
        );
        // infeasible estimate
        let chains = chain_of(&[1.0]);
        let src = SampleSource::Chains(&chains);
        let cost = CostFunctional::cm_preset(&post, CmPreset::C1);
        assert_eq!(
            estimate_bayes_cost(&cost, &[-1.0], &src).unwrap().value,
            f64::INFINITY
        );
    }
}
