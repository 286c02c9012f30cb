//! Bregman distances `D_F^q(a, b) = F(a) − F(b) − ⟨q, a − b⟩`, `q ∈ ∂F(b)`,
//! and the cost functionals built from them.
//!
//! A [`CostFunctional`] of kind [`CostKind::MapCost`] evaluates
//! `Σ w_i D_{F_i}(û, u)` with subgradients taken at the sample `u`; a
//! [`CostKind::CmCost`] evaluates `Σ w_i D_{F_i}(u, û)` with subgradients
//! taken at the estimate `û`.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::model::{Fidelity, Posterior, Prior};

/// Relative floor below which negative round-off is reported as zero.
const ZERO_FLOOR: f64 = 1e-12;

/// A convex functional exposing its value and one subgradient per point.
pub trait ConvexFunctional {
    /// Value at `u`, `+∞` outside the domain.
    fn value(&self, u: &[f64]) -> Result<f64>;
    /// A subgradient at `u`; [`Error::OutsideDomain`] outside the domain.
    fn subgradient(&self, u: &[f64]) -> Result<Vec<f64>>;
}

impl ConvexFunctional for Fidelity {
    fn value(&self, u: &[f64]) -> Result<f64> {
        Fidelity::value(self, u)
    }
    fn subgradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Fidelity::subgradient(self, u)
    }
}

impl ConvexFunctional for Prior {
    fn value(&self, u: &[f64]) -> Result<f64> {
        Prior::value(self, u)
    }
    fn subgradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Prior::subgradient(self, u)
    }
}

pub(crate) fn clip(d: f64, fa: f64, fb: f64) -> f64 {
    if d < 0.0 && -d <= ZERO_FLOOR * (1.0 + fa.abs() + fb.abs()) {
        0.0
    } else {
        d
    }
}

/// `F(a) − F(b) − ⟨q, a − b⟩` for a caller-supplied subgradient `q ∈ ∂F(b)`.
pub fn bregman_with_subgradient<F: ConvexFunctional + ?Sized>(
    functional: &F,
    a: &[f64],
    b: &[f64],
    q: &[f64],
) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    check_dim(a.len(), q.len())?;
    let fb = functional.value(b)?;
    if !fb.is_finite() {
        return Ok(f64::INFINITY);
    }
    let fa = functional.value(a)?;
    if !fa.is_finite() {
        return Ok(f64::INFINITY);
    }
    let lin: f64 = q
        .iter()
        .zip(a.iter().zip(b))
        .map(|(qi, (ai, bi))| qi * (ai - bi))
        .sum();
    Ok(clip(fa - fb - lin, fa, fb))
}

/// Bregman distance with the functional's own subgradient selection at `b`.
/// Returns `+∞` when either point lies outside the domain.
pub fn bregman_distance<F: ConvexFunctional + ?Sized>(
    functional: &F,
    a: &[f64],
    b: &[f64],
) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    match functional.subgradient(b) {
        Ok(q) => bregman_with_subgradient(functional, a, b, &q),
        Err(Error::OutsideDomain) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Owned functional handle stored inside a [`CostFunctional`].
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    Fidelity(Fidelity),
    Prior(Prior),
}

impl ConvexFunctional for Functional {
    fn value(&self, u: &[f64]) -> Result<f64> {
        match self {
            Self::Fidelity(f) => f.value(u),
            Self::Prior(p) => p.value(u),
        }
    }
    fn subgradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Fidelity(f) => f.subgradient(u),
            Self::Prior(p) => p.subgradient(u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CostKind {
    /// `D(û, u)`, subgradients at the sample.
    MapCost,
    /// `D(u, û)`, subgradients at the estimate.
    CmCost,
}

/// The CM cost presets: `C¹ = D_E(u, û)`, `C² = D_R(u, û)`, `C³ = D_E + α D_R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CmPreset {
    C1,
    C2,
    C3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub functional: Functional,
    pub weight: f64,
}

/// A Bayes cost `C(û, u)` assembled from weighted Bregman distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFunctional {
    kind: CostKind,
    terms: Vec<CostTerm>,
}

impl CostFunctional {
    pub fn new(kind: CostKind, terms: Vec<CostTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter(
                "cost functional needs at least one term".into(),
            ));
        }
        if terms
            .iter()
            .any(|t| !(t.weight >= 0.0 && t.weight.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "cost weights must be nonnegative".into(),
            ));
        }
        Ok(Self { kind, terms })
    }

    /// `D_E(û, u) + α D_R(û, u)`.
    pub fn map_cost(post: &Posterior) -> Self {
        Self {
            kind: CostKind::MapCost,
            terms: alloc::vec![
                CostTerm {
                    functional: Functional::Fidelity(post.fidelity().clone()),
                    weight: 1.0
                },
                CostTerm {
                    functional: Functional::Prior(*post.prior()),
                    weight: post.alpha()
                },
            ],
        }
    }

    pub fn cm_preset(post: &Posterior, preset: CmPreset) -> Self {
        let fid = CostTerm {
            functional: Functional::Fidelity(post.fidelity().clone()),
            weight: 1.0,
        };
        let terms = match preset {
            CmPreset::C1 => alloc::vec![fid],
            CmPreset::C2 => {
                alloc::vec![CostTerm {
                    functional: Functional::Prior(*post.prior()),
                    weight: 1.0
                }]
            }
            CmPreset::C3 => alloc::vec![
                fid,
                CostTerm {
                    functional: Functional::Prior(*post.prior()),
                    weight: post.alpha()
                },
            ],
        };
        Self {
            kind: CostKind::CmCost,
            terms,
        }
    }

    /// `‖u − û‖₂²`, written as twice the Tikhonov Bregman distance.
    pub fn mean_squared() -> Self {
        Self {
            kind: CostKind::CmCost,
            terms: alloc::vec![CostTerm {
                functional: Functional::Prior(Prior::tikhonov()),
                weight: 2.0,
            }],
        }
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn terms(&self) -> &[CostTerm] {
        &self.terms
    }

    /// `C(û, u)`; `+∞` whenever a required point lies outside a term's domain.
    pub fn evaluate(&self, estimate: &[f64], u: &[f64]) -> Result<f64> {
        self.prepare(estimate)?.evaluate(u)
    }

    /// Caches the estimate-side quantities so that evaluating over many
    /// samples only touches the sample side.
    pub fn prepare(&self, estimate: &[f64]) -> Result<PreparedCost<'_>> {
        let mut cached = Vec::with_capacity(self.terms.len());
        let mut feasible = true;
        for term in &self.terms {
            let value = term.functional.value(estimate)?;
            let subgradient = match self.kind {
                CostKind::CmCost if value.is_finite() => {
                    Some(term.functional.subgradient(estimate)?)
                }
                _ => None,
            };
            feasible &= value.is_finite();
            cached.push(CachedTerm { value, subgradient });
        }
        Ok(PreparedCost {
            cost: self,
            estimate: estimate.to_vec(),
            cached,
            feasible,
        })
    }
}

#[derive(Debug, Clone)]
struct CachedTerm {
    value: f64,
    subgradient: Option<Vec<f64>>,
}

/// A cost functional with its estimate argument fixed.
#[derive(Debug, Clone)]
pub struct PreparedCost<'a> {
    cost: &'a CostFunctional,
    estimate: Vec<f64>,
    cached: Vec<CachedTerm>,
    feasible: bool,
}

impl PreparedCost<'_> {
    /// Whether the estimate lies in the domain of every term.
    pub fn is_feasible(&self) -> bool {
        self.feasible
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<f64> {
        check_dim(self.estimate.len(), u.len())?;
        if !self.feasible {
            return Ok(f64::INFINITY);
        }
        let mut total = 0.0;
        for (term, cache) in self.cost.terms.iter().zip(&self.cached) {
            if term.weight == 0.0 {
                continue;
            }
            let fu = term.functional.value(u)?;
            if !fu.is_finite() {
                return Ok(f64::INFINITY);
            }
            let d = match self.cost.kind {
                CostKind::MapCost => {
                    // D(û, u): subgradient at the sample u
                    let q = term.functional.subgradient(u)?;
                    let lin: f64 = q
                        .iter()
                        .zip(self.estimate.iter().zip(u))
                        .map(|(qi, (a, b))| qi * (a - b))
                        .sum();
                    clip(cache.value - fu - lin, cache.value, fu)
                }
                CostKind::CmCost => {
                    // D(u, û): subgradient at the estimate
                    let q = cache.subgradient.as_deref().unwrap_or(&[]);
                    let lin: f64 = q
                        .iter()
                        .zip(u.iter().zip(&self.estimate))
                        .map(|(qi, (a, b))| qi * (a - b))
                        .sum();
                    clip(fu - cache.value - lin, fu, cache.value)
                }
            };
            total += term.weight * d;
        }
        Ok(total)
    }
}

/// `D_E(û, u) + α D_R(û, u)` with subgradients at `u`.
pub fn map_cost(post: &Posterior, estimate: &[f64], u: &[f64]) -> Result<f64> {
    CostFunctional::map_cost(post).evaluate(estimate, u)
}

/// `Σ w_i D_{F_i}(u, û)` for a cost of kind [`CostKind::CmCost`].
pub fn cm_cost(cost: &CostFunctional, estimate: &[f64], u: &[f64]) -> Result<f64> {
    if cost.kind() != CostKind::CmCost {
        return Err(Error::Config("cm_cost requires a cost of CM kind".into()));
    }
    cost.evaluate(estimate, u)
}
