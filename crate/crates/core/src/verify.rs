//! Numerical checks of the Bregman-cost optimality statements for MAP and
//! CM estimates. Every check returns a [`VerificationReport`] whose `passed`
//! flag is recomputable from its `measured` and `tolerances` maps.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bayes_cost::{
    estimate_cost_difference, minimize_bayes_cost, sample_average, EmpiricalCost, MinimizeConfig,
    SampleSource,
};
use crate::bregman::{CmPreset, CostFunctional, CostKind};
use crate::error::{Error, Result};
use crate::map_solver::{map_centred_logpost_with, optimality_selection};
use crate::model::{FidelityKind, ForwardOperator, Posterior, PriorKind};
use crate::rng::StreamSeed;
use crate::vecops::norm_inf;

/// Standard errors allowed by statistical checks.
pub const Z_SCORE: f64 = 3.0;
/// Absolute slack absorbing round-off in cost comparisons.
pub const COST_SLACK: f64 = 1e-9;
/// Absolute floor on the average-optimality residual tolerance.
pub const RESIDUAL_FLOOR: f64 = 1e-8;
/// Minimum distance tolerance for the CM Bayes-estimator check.
pub const CM_DISTANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerificationReport {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub seeds: Vec<StreamSeed>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: false,
            measured: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            seeds: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn measure(&mut self, key: &str, value: f64) -> &mut Self {
        self.measured.insert(key.to_string(), value);
        self
    }

    pub fn tolerance(&mut self, key: &str, value: f64) -> &mut Self {
        self.tolerances.insert(key.to_string(), value);
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn measured(&self, key: &str) -> Option<f64> {
        self.measured.get(key).copied()
    }
}

/// Draws a point near `centre` inside the posterior domain.
fn random_point<R: Rng>(post: &Posterior, centre: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut scale = 0.5 * (1.0 + norm_inf(centre));
    for attempt in 0..10_000 {
        let u: Vec<f64> = centre
            .iter()
            .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if post.in_domain(&u) {
            return Ok(u);
        }
        if attempt % 100 == 99 {
            scale *= 0.5;
        }
    }
    Err(Error::OutsideDomain)
}

/// MAP-centred form check: differences of the MAP-centred log-density
/// `−D_E(u, û) − α D_R(u, û)` must equal differences of `log p(u|f)` on
/// random in-domain pairs. `max_dev` is the largest absolute mismatch.
pub fn verify_map_centred_form(
    post: &Posterior,
    centre: &[f64],
    num_pairs: usize,
    tol: f64,
    seed: StreamSeed,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new("map_centred_form");
    let sel = optimality_selection(post, centre)?;
    let mut rng = seed.rng();
    let mut max_dev: f64 = 0.0;
    let mut max_scale: f64 = 0.0;
    for _ in 0..num_pairs {
        let u = random_point(post, centre, &mut rng)?;
        let v = random_point(post, centre, &mut rng)?;
        let dm = map_centred_logpost_with(post, centre, &sel, &u)?
            - map_centred_logpost_with(post, centre, &sel, &v)?;
        let dl = post.log_density(&u)? - post.log_density(&v)?;
        max_dev = max_dev.max((dm - dl).abs());
        max_scale = max_scale.max(dl.abs());
    }
    report
        .measure("max_dev", max_dev)
        .measure("max_abs_log_ratio", max_scale)
        .measure("centre_residual", norm_inf(&sel.composed))
        .measure("pairs", num_pairs as f64)
        .tolerance("max_dev", tol);
    report.seeds.push(seed);
    report.passed = max_dev <= tol;
    Ok(report)
}

/// Perturbations of `centre` with `‖δ‖∞ ≤ radius`: half on the coordinate
/// axes at evenly spaced distances, the rest uniform in the cube.
fn perturbations<R: Rng>(centre: &[f64], count: usize, radius: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let n = centre.len();
    let per_ray = (count / 2 / (2 * n)).max(1);
    let mut out = Vec::with_capacity(count);
    'grid: for j in 1..=per_ray {
        let d = radius * j as f64 / per_ray as f64;
        for i in 0..n {
            for s in [1.0, -1.0] {
                if out.len() >= count / 2 {
                    break 'grid;
                }
                let mut p = centre.to_vec();
                p[i] += s * d;
                out.push(p);
            }
        }
    }
    while out.len() < count {
        out.push(
            centre
                .iter()
                .map(|c| c + rng.random_range(-radius..=radius))
                .collect(),
        );
    }
    out
}

/// MAP Bayes-optimality check: no perturbation `û'` of the MAP estimate lowers the
/// Bayes cost `E[D_E(û', u) + α D_R(û', u)]` by more than `3·stderr + 1e-9`.
///
/// `cost` overrides the MAP cost (used by the wrong-orientation fixture).
pub fn verify_map_bayes_optimality(
    post: &Posterior,
    map_estimate: &[f64],
    source: &SampleSource<'_>,
    num_perturbations: usize,
    cost: Option<&CostFunctional>,
    seed: StreamSeed,
) -> Result<VerificationReport> {
    let default_cost = CostFunctional::map_cost(post);
    let cost = cost.unwrap_or(&default_cost);
    let mut report = VerificationReport::new("map_bayes_optimality");
    if cost.kind() != CostKind::MapCost {
        report.note("cost is not MAP-oriented; the MAP estimate is not expected to minimize it");
    }
    let empirical = EmpiricalCost::new(cost, *source)?;
    let base = empirical.estimate(map_estimate)?;
    let mut rng = seed.rng();
    let mut gap_min = f64::INFINITY;
    let mut stderr_at_min = 0.0;
    let mut margin_min = f64::INFINITY;
    let mut infeasible = 0usize;
    for p in perturbations(map_estimate, num_perturbations, 0.5, &mut rng) {
        let diff = match estimate_cost_difference(&empirical, &p, &empirical, map_estimate) {
            Ok(d) => d,
            Err(Error::OutsideDomain) => {
                infeasible += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let margin = diff.value + Z_SCORE * diff.stderr + COST_SLACK;
        if diff.value < gap_min {
            gap_min = diff.value;
            stderr_at_min = diff.stderr;
        }
        margin_min = margin_min.min(margin);
    }
    report
        .measure("bayes_cost_at_map", base.value)
        .measure("bayes_cost_stderr", base.stderr)
        .measure("gap_min", gap_min)
        .measure("gap_min_stderr", stderr_at_min)
        .measure("margin_min", margin_min)
        .measure("perturbations", num_perturbations as f64)
        .measure("infeasible_perturbations", infeasible as f64)
        .measure("excluded_samples", base.excluded_count as f64)
        .tolerance("z_score", Z_SCORE)
        .tolerance("slack", COST_SLACK)
        .tolerance("margin_min", 0.0);
    if let Some(w) = base.exclusion_warning {
        report.note(w);
    }
    report.seeds.push(seed);
    report.passed = margin_min >= 0.0;
    Ok(report)
}

/// Posterior mean of the source with per-coordinate standard errors.
pub fn source_mean(source: &SampleSource<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    let avg = sample_average(source, |u| Ok(u.to_vec()))?;
    Ok((avg.mean, avg.stderr))
}

/// Average optimality check: `r = Kᵀ g(K û_CM) + α E[∂R(u)]` vanishes for a Gaussian
/// fidelity and is coordinatewise nonnegative for a Poisson fidelity with a
/// nonnegative operator.
///
/// The standard error of `r` comes from the delta method: `r` is the sample
/// average of `J u_t + α p(u_t)` up to a constant, with `J` the Jacobian of
/// `u ↦ Kᵀ g(Ku)` at `û_CM`.
pub fn verify_cm_average_optimality(
    post: &Posterior,
    source: &SampleSource<'_>,
) -> Result<VerificationReport> {
    let fid = post.fidelity();
    let kind = fid.kind();
    if kind == FidelityKind::Laplace {
        return Err(Error::Unsupported(
            "average optimality needs a differentiable fidelity (Gaussian or Poisson)".into(),
        ));
    }
    let n = post.dim();
    let alpha = post.alpha();
    let (cm, _) = source_mean(source)?;
    let q_cm = fid.subgradient(&cm)?;

    // Jacobian of u ↦ Kᵀ g(Ku) by central differences
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let h = 1e-5 * cm[j].abs().max(1.0);
        let mut plus = cm.clone();
        let mut minus = cm.clone();
        plus[j] += h;
        minus[j] -= h;
        let (qp, qm) = match (fid.subgradient(&plus), fid.subgradient(&minus)) {
            (Ok(a), Ok(b)) => (a, b),
            // one-sided difference next to the Poisson floor
            _ => (fid.subgradient(&plus)?, q_cm.clone()),
        };
        let denom = if fid.in_domain(&minus) { 2.0 * h } else { h };
        for i in 0..n {
            jac[i * n + j] = (qp[i] - qm[i]) / denom;
        }
    }
    let prior = *post.prior();
    let linearized = sample_average(source, |u| {
        let p = prior.subgradient(u)?;
        Ok((0..n)
            .map(|i| (0..n).map(|j| jac[i * n + j] * u[j]).sum::<f64>() + alpha * p[i])
            .collect())
    })?;
    let prior_avg = sample_average(source, |u| prior.subgradient(u))?;
    let r: Vec<f64> = q_cm
        .iter()
        .zip(&prior_avg.mean)
        .map(|(q, p)| q + alpha * p)
        .collect();
    let se = &linearized.stderr;

    let mut report = VerificationReport::new("cm_average_optimality");
    for i in 0..n {
        report
            .measure(&format!("r_{i}"), r[i])
            .measure(&format!("stderr_{i}"), se[i]);
    }
    // margin > 0 means the statement holds at the 3-stderr level
    let (passed, strict) = match kind {
        FidelityKind::Gaussian => {
            let margin = r
                .iter()
                .zip(se)
                .map(|(ri, s)| Z_SCORE * s + RESIDUAL_FLOOR - ri.abs())
                .fold(f64::INFINITY, f64::min);
            report
                .measure("equality_margin", margin)
                .tolerance("equality_margin", 0.0);
            (margin >= 0.0, false)
        }
        _ => {
            let lower = r
                .iter()
                .zip(se)
                .map(|(ri, s)| ri + Z_SCORE * s + RESIDUAL_FLOOR)
                .fold(f64::INFINITY, f64::min);
            let strict_margin = r
                .iter()
                .zip(se)
                .map(|(ri, s)| ri - Z_SCORE * s - RESIDUAL_FLOOR)
                .fold(f64::INFINITY, f64::min);
            report
                .measure("nonnegativity_margin", lower)
                .measure("strict_margin", strict_margin)
                .tolerance("nonnegativity_margin", 0.0);
            (lower >= 0.0, strict_margin > 0.0)
        }
    };
    report
        .measure("max_abs", norm_inf(&r))
        .measure("min_coord", r.iter().copied().fold(f64::INFINITY, f64::min))
        .measure("strict", if strict { 1.0 } else { 0.0 })
        .tolerance("z_score", Z_SCORE)
        .tolerance("floor", RESIDUAL_FLOOR);
    report.note("residual uses the composed subgradient Kᵀ g(K û_CM)");
    if !fid.operator().is_nonnegative() {
        report.note(
            "operator has negative entries; the sign statement assumes entrywise nonnegative K",
        );
    } else {
        report.note("operator positivity interpreted as entrywise nonnegativity");
    }
    report.passed = passed;
    Ok(report)
}

/// CM Bayes-optimality check: the minimizer of the empirical Bayes cost of a CM-oriented
/// cost lies within `max(1e-4, 3·stderr)` of the CM estimate.
pub fn verify_cm_bayes_optimality(
    cost: &CostFunctional,
    source: &SampleSource<'_>,
    init: &[f64],
    cfg: &MinimizeConfig,
) -> Result<VerificationReport> {
    if cost.kind() != CostKind::CmCost {
        return Err(Error::Config(
            "CM Bayes optimality needs a CM-oriented cost".into(),
        ));
    }
    let (cm, cm_se) = source_mean(source)?;
    let empirical = EmpiricalCost::new(cost, *source)?;
    let result = minimize_bayes_cost(&empirical, init, cfg)?;
    let dist = result
        .estimate
        .iter()
        .zip(&cm)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let tol = CM_DISTANCE_FLOOR.max(Z_SCORE * norm_inf(&cm_se));
    let at_cm = empirical.value(&cm)?;
    let mut report = VerificationReport::new("cm_bayes_optimality");
    report
        .measure("dist", dist)
        .measure("bayes_cost_at_minimizer", result.value)
        .measure("bayes_cost_at_cm", at_cm)
        .measure("evaluations", result.evaluations as f64)
        .tolerance("dist", tol);
    for (i, (m, c)) in result.estimate.iter().zip(&cm).enumerate() {
        report
            .measure(&format!("minimizer_{i}"), *m)
            .measure(&format!("cm_{i}"), *c);
    }
    report.passed = dist <= tol;
    Ok(report)
}

/// Whether the empirical Bayes cost of a CM preset has a unique minimizer.
/// `D_E` pins `û` down only for a Gaussian or Poisson fidelity with injective
/// `K` (and positive counts for Poisson), `D_R` only for the Tikhonov prior.
pub fn cm_preset_identifiable(post: &Posterior, preset: CmPreset) -> Result<bool> {
    let fid = post.fidelity();
    let fidelity = match fid.kind() {
        FidelityKind::Laplace => false,
        FidelityKind::Gaussian => is_injective(fid.operator())?,
        FidelityKind::Poisson => {
            fid.data().iter().all(|&f| f > 0.0) && is_injective(fid.operator())?
        }
    };
    let prior = post.prior().kind() == PriorKind::Tikhonov;
    Ok(match preset {
        CmPreset::C1 => fidelity,
        CmPreset::C2 => prior,
        CmPreset::C3 => fidelity || prior,
    })
}

/// Full column rank test by Gaussian elimination with partial pivoting.
fn is_injective(op: &ForwardOperator) -> Result<bool> {
    let (m, n) = (op.output_dim(), op.input_dim());
    if m < n {
        return Ok(false);
    }
    let mut a = vec![0.0; m * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        e[j] = 0.0;
        for i in 0..m {
            a[i * n + j] = col[i];
        }
    }
    let tol = 1e-10 * a.iter().fold(0.0, |s: f64, x| s.max(x.abs()));
    for col in 0..n {
        let pivot = (col..m)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col].abs() <= tol {
            return Ok(false);
        }
        for k in 0..n {
            a.swap(pivot * n + k, col * n + k);
        }
        for r in col + 1..m {
            let factor = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= factor * a[col * n + k];
            }
        }
    }
    Ok(true)
}

/// [`verify_cm_bayes_optimality`] for a preset cost. When the preset is not
/// identifiable the minimizer is not unique, so the check asks instead that
/// the CM estimate attain the minimal empirical cost.
pub fn verify_cm_preset_optimality(
    post: &Posterior,
    preset: CmPreset,
    source: &SampleSource<'_>,
    init: &[f64],
    cfg: &MinimizeConfig,
) -> Result<VerificationReport> {
    let cost = CostFunctional::cm_preset(post, preset);
    let mut report = verify_cm_bayes_optimality(&cost, source, init, cfg)?;
    report.name = format!("cm_bayes_optimality_{}", preset_name(preset));
    let identifiable = cm_preset_identifiable(post, preset)?;
    report.measure("identifiable", if identifiable { 1.0 } else { 0.0 });
    if !identifiable {
        let at_min = report
            .measured("bayes_cost_at_minimizer")
            .unwrap_or(f64::NAN);
        let at_cm = report.measured("bayes_cost_at_cm").unwrap_or(f64::NAN);
        let slack = COST_SLACK * (1.0 + at_min.abs());
        report
            .measure("value_gap", at_cm - at_min)
            .tolerance("value_gap", slack)
            .note("cost has flat directions; checked that the CM estimate attains the minimum");
        report.passed = at_cm - at_min <= slack;
    }
    Ok(report)
}

fn preset_name(preset: CmPreset) -> &'static str {
    match preset {
        CmPreset::C1 => "c1",
        CmPreset::C2 => "c2",
        CmPreset::C3 => "c3",
    }
}

/// Risk comparison: `E[D_R(u, û_CM)] ≤ E[D_R(u, û_MAP)] + 3·stderr` with the
/// subgradient taken at the estimate. Mean-squared errors are reported for context.
pub fn compare_estimates(
    post: &Posterior,
    map_estimate: &[f64],
    cm_estimate: &[f64],
    source: &SampleSource<'_>,
) -> Result<VerificationReport> {
    let c2 = CostFunctional::cm_preset(post, CmPreset::C2);
    let emp = EmpiricalCost::new(&c2, *source)?;
    let cm_risk = emp.estimate(cm_estimate)?;
    let map_risk = emp.estimate(map_estimate)?;
    let diff = estimate_cost_difference(&emp, cm_estimate, &emp, map_estimate)?;
    let mse = CostFunctional::mean_squared();
    let emp_mse = EmpiricalCost::new(&mse, *source)?;
    let margin = Z_SCORE * diff.stderr + COST_SLACK - diff.value;
    let equal = diff.value.abs() <= Z_SCORE * diff.stderr + COST_SLACK;
    let mut report = VerificationReport::new("compare_estimates");
    report
        .measure("cm_risk", cm_risk.value)
        .measure("cm_risk_stderr", cm_risk.stderr)
        .measure("map_risk", map_risk.value)
        .measure("map_risk_stderr", map_risk.stderr)
        .measure("risk_difference", diff.value)
        .measure("risk_difference_stderr", diff.stderr)
        .measure("margin", margin)
        .measure("risks_equal", if equal { 1.0 } else { 0.0 })
        .measure("mse_cm", emp_mse.value(cm_estimate)?)
        .measure("mse_map", emp_mse.value(map_estimate)?)
        .measure("map_cm_distance", {
            map_estimate
                .iter()
                .zip(cm_estimate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .tolerance("z_score", Z_SCORE)
        .tolerance("slack", COST_SLACK)
        .tolerance("margin", 0.0);
    report.passed = margin >= 0.0;
    Ok(report)
}
