//! MAP estimation by accelerated proximal gradient, the optimality residual
//! `Kᵀ q̂ + α p̂`, and the MAP-centred log-density
//! `−D_E(u, û_MAP) − α D_R(u, û_MAP)`.
//!
//! The objective `E(u) + α R(u)` is split into a smooth part handled by
//! gradient steps and a separable part handled by an exact prox:
//!
//! | fidelity / prior          | smooth part                | prox part                     |
//! |---------------------------|----------------------------|-------------------------------|
//! | Gaussian, Poisson         | `E`                        | –                             |
//! | Poisson, `K = I`          | `E`                        | projection on `u ≥ ε`         |
//! | Poisson, other `K`        | `E` + log barrier (→ 0)    | –                             |
//! | Laplace, `K = I`          | –                          | `‖u − f‖₁`                    |
//! | Laplace, other `K`        | Huber-smoothed `E` (→ 0)   | –                             |
//! | Tikhonov, Huber-TV prior  | `α R`                      | –                             |
//! | ℓ1 prior                  | –                          | `α s ‖u‖₁`                    |

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::error::{check_dim, Error, Result};
use crate::model::{FidelityKind, Posterior, PriorKind};
use crate::vecops::{dot, norm_inf, sign0};

/// Entries within this relative distance of a kink are treated as sitting on it.
const KINK_TOL: f64 = 1e-12;

/// Relative objective increase still accepted as non-increasing.
const ROUNDOFF_SLACK: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Target for [`optimality_residual`].
    pub tolerance: f64,
    /// Starting point; defaults to the back-projection `Kᵀ f` moved into the domain.
    pub initial: Option<Vec<f64>>,
    /// Record the objective after every iteration of the final phase.
    pub track_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-8,
            initial: None,
            track_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MapResult {
    pub estimate: Vec<f64>,
    /// `E(û) + α R(û)`.
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective sequence of the final phase (empty unless tracking was requested).
    pub objective_trace: Vec<f64>,
}

/// Subgradients at a point chosen to make `Kᵀ g + α p` as small as possible.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientSelection {
    /// `g ∈ ∂G(Ku; f)` in data space.
    pub data_subgradient: Vec<f64>,
    /// `p ∈ ∂R(u)`.
    pub prior_subgradient: Vec<f64>,
    /// `Kᵀ g + α p`.
    pub composed: Vec<f64>,
}

/// Picks `g ∈ ∂G(Ku)` and `p ∈ ∂R(u)` minimizing `‖Kᵀ g + α p‖₂`.
///
/// Only Laplace kinks (`(Ku)_i = f_i`) and ℓ1 kinks (`u_j = 0`) leave a
/// choice; the free entries are found by projected gradient on the box
/// `[−1, 1]` (resp. `[−s, s]`).
pub fn optimality_selection(post: &Posterior, u: &[f64]) -> Result<SubgradientSelection> {
    let fid = post.fidelity();
    let op = fid.operator();
    let alpha = post.alpha();
    let ku = fid.image(u)?;
    let mut g = fid.data_subgradient(&ku)?;
    let mut p = post.prior().subgradient(u)?;

    let free_data: Vec<usize> = if fid.kind() == FidelityKind::Laplace {
        ku.iter()
            .zip(fid.data())
            .enumerate()
            .filter(|(_, (v, f))| (*v - *f).abs() <= KINK_TOL * (1.0 + f.abs()))
            .map(|(i, _)| i)
            .collect()
    } else {
        Vec::new()
    };
    let scale = post.prior().scale();
    let free_prior: Vec<usize> = if post.prior().kind() == PriorKind::L1 {
        u.iter()
            .enumerate()
            .filter(|(_, x)| x.abs() <= KINK_TOL)
            .map(|(j, _)| j)
            .collect()
    } else {
        Vec::new()
    };
    for &i in &free_data {
        g[i] = 0.0;
    }
    for &j in &free_prior {
        p[j] = 0.0;
    }

    let n = u.len();
    let mut composed = op.apply_adjoint(&g)?;
    for (c, pj) in composed.iter_mut().zip(&p) {
        *c += alpha * pj;
    }

    if !free_data.is_empty() || !free_prior.is_empty() {
        // columns of A with r = r0 + A z
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut bounds: Vec<f64> = Vec::new();
        for &i in &free_data {
            let mut e = vec![0.0; op.output_dim()];
            e[i] = 1.0;
            cols.push(op.apply_adjoint(&e)?);
            bounds.push(1.0);
        }
        for &j in &free_prior {
            let mut e = vec![0.0; n];
            e[j] = alpha;
            cols.push(e);
            bounds.push(scale);
        }
        let z = box_least_squares(&composed, &cols, &bounds);
        for (k, &i) in free_data.iter().enumerate() {
            g[i] = z[k];
        }
        for (k, &j) in free_prior.iter().enumerate() {
            p[j] = z[free_data.len() + k];
        }
        composed = op.apply_adjoint(&g)?;
        for (c, pj) in composed.iter_mut().zip(&p) {
            *c += alpha * pj;
        }
    }

    Ok(SubgradientSelection {
        data_subgradient: g,
        prior_subgradient: p,
        composed,
    })
}

/// `min ½‖r0 + Σ_k z_k a_k‖²` subject to `|z_k| ≤ b_k`, by accelerated projected gradient.
fn box_least_squares(r0: &[f64], cols: &[Vec<f64>], bounds: &[f64]) -> Vec<f64> {
    let m = cols.len();
    let residual = |z: &[f64]| -> Vec<f64> {
        let mut r = r0.to_vec();
        for (zk, a) in z.iter().zip(cols) {
            for (ri, ai) in r.iter_mut().zip(a) {
                *ri += zk * ai;
            }
        }
        r
    };
    // power iteration for the largest eigenvalue of AᵀA
    let mut v = vec![1.0; m];
    let mut lip = 0.0;
    for _ in 0..100 {
        let av = residual_linear(&v, cols, r0.len());
        let w: Vec<f64> = cols.iter().map(|a| dot(a, &av)).collect();
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nw == 0.0 {
            break;
        }
        lip = nw / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / nw).collect();
    }
    if lip == 0.0 {
        return vec![0.0; m];
    }
    let step = 1.0 / (lip * 1.01);
    let project = |z: &mut [f64]| {
        for (zk, b) in z.iter_mut().zip(bounds) {
            *zk = zk.clamp(-*b, *b);
        }
    };
    let mut z = vec![0.0; m];
    let mut y = z.clone();
    let mut t = 1.0;
    for _ in 0..20_000 {
        let r = residual(&y);
        let grad: Vec<f64> = cols.iter().map(|a| dot(a, &r)).collect();
        let mut z_next: Vec<f64> = y.iter().zip(&grad).map(|(yk, gk)| yk - step * gk).collect();
        project(&mut z_next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let moved = z_next
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        y = z_next
            .iter()
            .zip(&z)
            .map(|(a, b)| a + ((t - 1.0) / t_next) * (a - b))
            .collect();
        z = z_next;
        t = t_next;
        if moved <= 1e-16 {
            break;
        }
    }
    z
}

fn residual_linear(z: &[f64], cols: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut r = vec![0.0; len];
    for (zk, a) in z.iter().zip(cols) {
        for (ri, ai) in r.iter_mut().zip(a) {
            *ri += zk * ai;
        }
    }
    r
}

/// Infinity norm of `Kᵀ q̂ + α p̂` for the best subgradient selection at `u`.
///
/// With an ℓ1 prior the value is divided by `α`, i.e. it is the distance of
/// `−Kᵀq̂/α` from `∂‖·‖₁(u)` per coordinate.
pub fn optimality_residual(post: &Posterior, u: &[f64]) -> Result<f64> {
    let sel = optimality_selection(post, u)?;
    let r = norm_inf(&sel.composed);
    Ok(if post.prior().kind() == PriorKind::L1 {
        r / post.alpha()
    } else {
        r
    })
}

/// `−D_E(u, û) − α D_R(u, û)` with the subgradients at `û` taken from
/// [`optimality_selection`]; `−∞` outside the domain.
pub fn map_centred_logpost(post: &Posterior, centre: &[f64], u: &[f64]) -> Result<f64> {
    check_dim(post.dim(), u.len())?;
    let sel = optimality_selection(post, centre)?;
    map_centred_logpost_with(post, centre, &sel, u)
}

pub(crate) fn map_centred_logpost_with(
    post: &Posterior,
    centre: &[f64],
    sel: &SubgradientSelection,
    u: &[f64],
) -> Result<f64> {
    let fid = post.fidelity();
    let e_u = fid.value(u)?;
    if !e_u.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let e_c = fid.value(centre)?;
    let q = fid.operator().apply_adjoint(&sel.data_subgradient)?;
    let diff: Vec<f64> = u.iter().zip(centre).map(|(a, b)| a - b).collect();
    let d_e = e_u - e_c - dot(&q, &diff);
    let d_r =
        post.prior().value(u)? - post.prior().value(centre)? - dot(&sel.prior_subgradient, &diff);
    Ok(-d_e - post.alpha() * d_r)
}

/// Huber function with the `|t| − μ/2` normalization.
fn huber(t: f64, mu: f64) -> f64 {
    if t.abs() <= mu {
        t * t / (2.0 * mu)
    } else {
        t.abs() - mu / 2.0
    }
}

fn huber_derivative(t: f64, mu: f64) -> f64 {
    if t.abs() <= mu {
        t / mu
    } else {
        sign0(t)
    }
}

/// `argmin_x ½(x − v)² + Σ w_k |x − c_k|` for at most a few breakpoints.
fn prox_abs_sum(v: f64, points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return v;
    }
    let objective = |x: f64| -> f64 {
        0.5 * (x - v) * (x - v) + points.iter().map(|(c, w)| w * (x - c).abs()).sum::<f64>()
    };
    let mut sorted: Vec<f64> = points.iter().map(|p| p.0).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut best = sorted[0];
    let mut best_val = objective(best);
    let mut consider = |x: f64| {
        let val = objective(x);
        if val < best_val {
            best = x;
            best_val = val;
        }
    };
    for &c in &sorted {
        consider(c);
    }
    // one stationary candidate per open interval between breakpoints
    for k in 0..=sorted.len() {
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            sorted[k - 1]
        };
        let hi = if k == sorted.len() {
            f64::INFINITY
        } else {
            sorted[k]
        };
        let x = v - points
            .iter()
            .map(|(c, w)| if *c <= lo { *w } else { -*w })
            .sum::<f64>();
        if x > lo && x < hi {
            consider(x);
        }
    }
    best
}

/// One continuation phase of the composite objective.
struct Composite<'a> {
    post: &'a Posterior,
    /// Laplace fidelity moved to the prox (identity operator only).
    laplace_prox: bool,
    /// Huber width for a smoothed Laplace fidelity; 0 disables smoothing.
    laplace_smoothing: f64,
    /// Log-barrier weight on `(Ku)_i − ε`; 0 disables the barrier.
    barrier: f64,
    /// Poisson floor enforced by projection (identity operator only).
    floor_projection: Option<f64>,
    /// `α s` for an ℓ1 prior, 0 otherwise.
    l1_weight: f64,
}

impl Composite<'_> {
    fn smooth_value(&self, u: &[f64]) -> f64 {
        let fid = self.post.fidelity();
        let mut ku = vec![0.0; fid.operator().output_dim()];
        fid.operator().apply_into(u, &mut ku);
        let mut total = if self.laplace_prox {
            0.0
        } else if self.laplace_smoothing > 0.0 {
            ku.iter()
                .zip(fid.data())
                .map(|(v, f)| huber(v - f, self.laplace_smoothing))
                .sum()
        } else {
            fid.value_at_image(&ku)
        };
        if self.barrier > 0.0 {
            let floor = fid.poisson_floor();
            for v in &ku {
                if *v <= floor {
                    return f64::INFINITY;
                }
                total -= self.barrier * (v - floor).ln();
            }
        }
        if !total.is_finite() {
            return f64::INFINITY;
        }
        let prior = self.post.prior();
        if prior.is_smooth() {
            // prior value cannot fail on finite input
            total += self.post.alpha() * prior.value(u).unwrap_or(f64::INFINITY);
        }
        total
    }

    fn smooth_gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let fid = self.post.fidelity();
        let op = fid.operator();
        let mut ku = vec![0.0; op.output_dim()];
        op.apply_into(u, &mut ku);
        let mut data_grad = if self.laplace_prox {
            vec![0.0; ku.len()]
        } else if self.laplace_smoothing > 0.0 {
            ku.iter()
                .zip(fid.data())
                .map(|(v, f)| huber_derivative(v - f, self.laplace_smoothing))
                .collect()
        } else {
            fid.data_subgradient(&ku)?
        };
        if self.barrier > 0.0 {
            let floor = fid.poisson_floor();
            for (g, v) in data_grad.iter_mut().zip(&ku) {
                *g -= self.barrier / (v - floor);
            }
        }
        let mut grad = vec![0.0; u.len()];
        op.apply_adjoint_into(&data_grad, &mut grad);
        let prior = self.post.prior();
        if prior.is_smooth() {
            for (g, p) in grad.iter_mut().zip(prior.subgradient(u)?) {
                *g += self.post.alpha() * p;
            }
        }
        Ok(grad)
    }

    fn nonsmooth_value(&self, u: &[f64]) -> f64 {
        if let Some(floor) = self.floor_projection {
            if u.iter().any(|&x| x < floor) {
                return f64::INFINITY;
            }
        }
        let mut total = self.l1_weight * u.iter().map(|x| x.abs()).sum::<f64>();
        if self.laplace_prox {
            total += u
                .iter()
                .zip(self.post.fidelity().data())
                .map(|(x, f)| (x - f).abs())
                .sum::<f64>();
        }
        total
    }

    fn prox(&self, v: &[f64], step: f64) -> Vec<f64> {
        let data = self.post.fidelity().data();
        v.iter()
            .enumerate()
            .map(|(i, &vi)| {
                let mut points: [(f64, f64); 2] = [(0.0, 0.0); 2];
                let mut len = 0;
                if self.laplace_prox {
                    points[len] = (data[i], step);
                    len += 1;
                }
                if self.l1_weight > 0.0 {
                    points[len] = (0.0, step * self.l1_weight);
                    len += 1;
                }
                let x = prox_abs_sum(vi, &points[..len]);
                match self.floor_projection {
                    Some(floor) => x.max(floor),
                    None => x,
                }
            })
            .collect()
    }

    fn total(&self, u: &[f64]) -> f64 {
        let s = self.smooth_value(u);
        if s.is_finite() {
            s + self.nonsmooth_value(u)
        } else {
            f64::INFINITY
        }
    }
}

fn initial_point(post: &Posterior, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let fid = post.fidelity();
    let op = fid.operator();
    let mut u0 = match &cfg.initial {
        Some(init) => {
            check_dim(post.dim(), init.len())?;
            if init.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
            init.clone()
        }
        None => op.apply_adjoint(fid.data())?,
    };
    if fid.kind() != FidelityKind::Poisson {
        return Ok(u0);
    }
    let floor = fid.poisson_floor();
    if op.is_identity() {
        for x in u0.iter_mut() {
            *x = x.max(floor);
        }
        return Ok(u0);
    }
    let strictly_inside = |u: &[f64]| op.apply(u).map(|ku| ku.iter().all(|&v| v > floor));
    let mut shift = 1.0;
    while !strictly_inside(&u0)? {
        if shift > 1e12 {
            return Err(Error::Unsupported(
                "no feasible Poisson starting point found (operator rows need positive sums)"
                    .into(),
            ));
        }
        u0.iter_mut().for_each(|x| *x += shift);
        shift *= 2.0;
    }
    Ok(u0)
}

/// Computes `argmin E(u) + α R(u)`.
///
/// Non-convergence is not an error: the result carries `converged = false`.
pub fn solve_map(post: &Posterior, cfg: &SolverConfig) -> Result<MapResult> {
    if !(cfg.tolerance > 0.0) || cfg.max_iterations == 0 {
        return Err(Error::Config(
            "solver needs a positive tolerance and iteration budget".into(),
        ));
    }
    let fid = post.fidelity();
    let identity = fid.operator().is_identity();
    let poisson = fid.kind() == FidelityKind::Poisson;
    let laplace = fid.kind() == FidelityKind::Laplace;
    let mut problem = Composite {
        post,
        laplace_prox: laplace && identity,
        laplace_smoothing: 0.0,
        barrier: 0.0,
        floor_projection: (poisson && identity).then(|| fid.poisson_floor()),
        l1_weight: if post.prior().kind() == PriorKind::L1 {
            post.alpha() * post.prior().scale()
        } else {
            0.0
        },
    };

    // (barrier, smoothing) per phase; the last phase is the exact problem
    // except for a smoothed Laplace fidelity, which ends at a tiny width.
    let phases: Vec<(f64, f64)> = if poisson && !identity {
        vec![
            (1e-2, 0.0),
            (1e-4, 0.0),
            (1e-6, 0.0),
            (1e-8, 0.0),
            (0.0, 0.0),
        ]
    } else if laplace && !identity {
        (1..=9).map(|k| (0.0, 10f64.powi(-k))).collect()
    } else {
        vec![(0.0, 0.0)]
    };

    let mut x = initial_point(post, cfg)?;
    let mut iterations = 0usize;
    let mut lip = 1.0;
    let mut trace = Vec::new();
    let mut converged = false;
    let n_phases = phases.len();

    for (phase_idx, &(barrier, smoothing)) in phases.iter().enumerate() {
        let last = phase_idx + 1 == n_phases;
        problem.barrier = barrier;
        problem.laplace_smoothing = smoothing;
        let phase_tol = if last {
            cfg.tolerance
        } else {
            cfg.tolerance.max(barrier.max(smoothing))
        };
        let remaining = cfg.max_iterations.saturating_sub(iterations);
        let budget = if last {
            remaining
        } else {
            remaining / (n_phases - phase_idx)
        };

        let mut fx = problem.total(&x);
        if !fx.is_finite() {
            return Err(Error::OutsideDomain);
        }
        let mut y = x.clone();
        let mut t = 1.0;
        if last && cfg.track_objective {
            trace.push(fx);
        }
        for _ in 0..budget {
            iterations += 1;
            if !problem.smooth_value(&y).is_finite() {
                y.clone_from(&x);
                t = 1.0;
            }
            let gy = problem.smooth_gradient(&y)?;
            // For convex f, ⟨∇f(z) − ∇f(y), z − y⟩ ≤ (L/2)‖z − y‖² implies the
            // quadratic upper bound; it is tested on gradients because
            // objective values stop resolving the decrease near the optimum.
            let (z, fz, gz) = loop {
                let v: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / lip).collect();
                let z = problem.prox(&v, 1.0 / lip);
                let fz = problem.smooth_value(&z);
                if fz.is_finite() {
                    let gz = problem.smooth_gradient(&z)?;
                    let d: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
                    let curvature: f64 = gz
                        .iter()
                        .zip(&gy)
                        .zip(&d)
                        .map(|((a, b), di)| (a - b) * di)
                        .sum();
                    if curvature <= 0.5 * lip * dot(&d, &d) {
                        break (z, fz, gz);
                    }
                }
                lip *= 2.0;
                if lip > 1e300 {
                    return Err(Error::Diverged("backtracking step size underflow".into()));
                }
            };
            // ∇f(z) − ∇f(y) + L(y − z) ∈ ∂F(z)
            let cheap = gz
                .iter()
                .zip(&gy)
                .zip(y.iter().zip(&z))
                .map(|((a, b), (yy, zz))| (a - b + lip * (yy - zz)).abs())
                .fold(0.0, f64::max);

            let fz_total = fz + problem.nonsmooth_value(&z);
            // objective differences below round-off carry no information
            let accepted = fz_total <= fx + ROUNDOFF_SLACK * (1.0 + fx.abs());
            if accepted {
                // keep momentum only on a genuine decrease whose step still
                // points along the previous direction (gradient restart test)
                let keep_momentum = fz_total < fx
                    && y.iter()
                        .zip(&z)
                        .zip(&x)
                        .map(|((yy, zz), xx)| (yy - zz) * (zz - xx))
                        .sum::<f64>()
                        <= 0.0;
                if keep_momentum {
                    let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
                    let beta = (t - 1.0) / t_next;
                    y = z.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
                    t = t_next;
                } else {
                    y.clone_from(&z);
                    t = 1.0;
                }
                x = z;
                fx = fx.min(fz_total);
            } else {
                y.clone_from(&x);
                t = 1.0;
            }
            if last && cfg.track_objective {
                trace.push(fx);
            }
            if accepted && cheap <= phase_tol {
                if !last {
                    break;
                }
                if optimality_residual(post, &x)? <= cfg.tolerance {
                    converged = true;
                    break;
                }
                if smoothing > 0.0 {
                    // smoothed optimum reached; the exact residual will not improve further
                    break;
                }
            }
            lip = (lip * 0.9).max(1e-12);
        }
    }

    let residual = optimality_residual(post, &x)?;
    Ok(MapResult {
        objective: post.objective(&x)?,
        converged: converged || residual <= cfg.tolerance,
        residual,
        iterations,
        estimate: x,
        objective_trace: trace,
    })
}
