use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::error::{Error, Result};
use crate::map_solver::{solve_map, SolverConfig};
use crate::model::{FidelityKind, Posterior, PriorKind};

/// Largest dimension the quadrature oracle supports.
pub const MAX_QUADRATURE_DIM: usize = 3;

/// Nodes whose weight is below this fraction of the largest node weight are dropped.
const NEGLIGIBLE_WEIGHT: f64 = 1e-20;

/// A box face is pushed out by this factor (relative to the centre) per round.
const GROW_FACTOR: f64 = 1.5;
const MAX_GROW_ROUNDS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadratureConfig {
    /// Gauss–Legendre nodes per axis, shared among the panels of that axis.
    pub nodes_per_dim: usize,
    /// Initial half-width of the box in posterior standard deviations.
    pub width: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_dim: 257,
            width: 8.0,
        }
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (core::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (mut p_prev, mut p) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
                p_prev = p;
                p = p_next;
            }
            deriv = nf * (x * p - p_prev) / (x * x - 1.0);
            let dx = p / deriv;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Normalized discrete approximation of the posterior by an iterated
/// Gauss–Legendre rule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadratureMeasure {
    dim: usize,
    bounds: Vec<(f64, f64)>,
    centre: Vec<f64>,
    nodes_per_axis: Vec<usize>,
    points: Vec<f64>,
    weights: Vec<f64>,
    dropped_mass: f64,
}

/// Result of [`QuadratureMeasure::expectation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub value: Vec<f64>,
    /// Posterior mass of nodes where the integrand was not finite.
    pub excluded_weight: f64,
    pub coverage_warning: Option<String>,
}

impl QuadratureMeasure {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bounding box of the integration region.
    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// The MAP point the box was built around.
    pub fn centre(&self) -> &[f64] {
        &self.centre
    }

    /// Most nodes placed on a single integration line along each grid axis.
    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis
    }

    /// Number of retained (non-negligible) nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Relative weight dropped as negligible before normalization.
    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// `Σ w_k g(x_k)`; nodes where `g` has a non-finite entry are excluded and
    /// the remaining weights renormalized.
    pub fn expectation<G>(&self, mut g: G) -> Result<Expectation>
    where
        G: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut acc: Option<Vec<f64>> = None;
        let mut kept = 0.0;
        let mut excluded = 0.0;
        for (x, w) in self.iter() {
            let v = g(x)?;
            if v.iter().any(|c| !c.is_finite()) {
                excluded += w;
                continue;
            }
            let a = acc.get_or_insert_with(|| vec![0.0; v.len()]);
            for (ai, vi) in a.iter_mut().zip(&v) {
                *ai += w * vi;
            }
            kept += w;
        }
        let mut value = acc.ok_or(Error::EmptySamples)?;
        if kept <= 0.0 {
            return Err(Error::EmptySamples);
        }
        value.iter_mut().for_each(|v| *v /= kept);
        let coverage_warning = (excluded > 0.0)
            .then(|| format!("integrand not finite on nodes carrying mass {excluded:.3e}"));
        Ok(Expectation {
            value,
            excluded_weight: excluded,
            coverage_warning,
        })
    }

    /// Posterior mean `Σ w_k x_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += w * xi;
            }
        }
        m
    }

    /// Per-coordinate posterior variance.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for ((vi, xi), mi) in v.iter_mut().zip(x).zip(&m) {
                *vi += w * (xi - mi) * (xi - mi);
            }
        }
        v
    }
}

fn neg_log(post: &Posterior, x: &[f64]) -> f64 {
    post.objective(x).unwrap_or(f64::INFINITY)
}

/// Inverse of the finite-difference Hessian of `−log p` at `c`, or its
/// diagonal fallback `1/H_ii` (then 1) when the Hessian is not positive definite.
fn inverse_hessian(post: &Posterior, c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let h: Vec<f64> = c.iter().map(|x| 1e-4 * x.abs().max(1.0)).collect();
    let at = |shifts: &[(usize, f64)]| -> f64 {
        let mut x = c.to_vec();
        for &(i, s) in shifts {
            x[i] += s;
        }
        neg_log(post, &x)
    };
    let f0 = at(&[]);
    let mut hess = vec![0.0; n * n];
    for i in 0..n {
        hess[i * n + i] = (at(&[(i, h[i])]) - 2.0 * f0 + at(&[(i, -h[i])])) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at(&[(i, h[i]), (j, h[j])])
                - at(&[(i, h[i]), (j, -h[j])])
                - at(&[(i, -h[i]), (j, h[j])])
                + at(&[(i, -h[i]), (j, -h[j])]))
                / (4.0 * h[i] * h[j]);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    invert_spd(&hess, n).unwrap_or_else(|| {
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            let d = hess[i * n + i];
            inv[i * n + i] = if d.is_finite() && d > 0.0 {
                1.0 / d
            } else {
                1.0
            };
        }
        inv
    })
}

/// Inverse of a symmetric positive definite matrix by Cholesky; `None` otherwise.
fn invert_spd(a: &[f64], n: usize) -> Option<Vec<f64>> {
    if a.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        // solve L y = e_col, then Lᵀ x = y
        let mut y = vec![0.0; n];
        for i in 0..n {
            let rhs = if i == col { 1.0 } else { 0.0 };
            y[i] = (rhs - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let x = (y[i]
                - (i + 1..n)
                    .map(|k| l[k * n + i] * inv[k * n + col])
                    .sum::<f64>())
                / l[i * n + i];
            inv[i * n + col] = x;
        }
    }
    Some(inv)
}

/// Inverse of a general square matrix by Gauss–Jordan elimination with
/// partial pivoting; `None` when (numerically) singular.
fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&p, &q| m[p * n + col].abs().total_cmp(&m[q * n + col].abs()))?;
        if m[pivot * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        for k in 0..n {
            m.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let p = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r != col {
                let factor = m[r * n + col];
                for k in 0..n {
                    m[r * n + k] -= factor * m[col * n + k];
                    inv[r * n + k] -= factor * inv[col * n + k];
                }
            }
        }
    }
    Some(inv)
}

fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..n).map(|j| a[i * n + j] * x[j]).sum();
    }
}

/// Hyperplane `c·x = b` across which `−log p` is not smooth: a kink, a
/// curvature jump, or the edge of the domain.
#[derive(Debug, Clone)]
struct Hyperplane {
    c: Vec<f64>,
    b: f64,
}

impl Hyperplane {
    fn scale(&self) -> f64 {
        self.c.iter().fold(0.0, |s: f64, x| s.max(x.abs()))
    }

    /// Crossing with the line `x_k = t`, `x_j = prefix_j` for `j < k`.
    fn crossing(&self, prefix: &[f64]) -> Option<f64> {
        let k = prefix.len();
        let ck = self.c[k];
        if ck.abs() <= 1e-12 * self.scale() {
            return None;
        }
        let rest: f64 = prefix.iter().zip(&self.c).map(|(x, c)| x * c).sum();
        Some((self.b - rest) / ck)
    }
}

/// Columns of the operator, as rows of the dense matrix.
fn operator_rows(post: &Posterior) -> Vec<Vec<f64>> {
    let n = post.dim();
    let op = post.fidelity().operator();
    let mut rows = vec![vec![0.0; n]; op.output_dim()];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        if let Ok(col) = op.apply(&e) {
            for (row, v) in rows.iter_mut().zip(col) {
                row[j] = v;
            }
        }
        e[j] = 0.0;
    }
    rows
}

/// Hyperplanes in `u` on which `−log p` is not smooth.
fn singular_set(post: &Posterior) -> Vec<Hyperplane> {
    let n = post.dim();
    let fid = post.fidelity();
    let mut planes = Vec::new();
    match fid.kind() {
        FidelityKind::Gaussian => {}
        FidelityKind::Laplace => {
            for (c, &b) in operator_rows(post).into_iter().zip(fid.data()) {
                planes.push(Hyperplane { c, b });
            }
        }
        FidelityKind::Poisson => {
            for c in operator_rows(post) {
                planes.push(Hyperplane {
                    c,
                    b: fid.poisson_floor(),
                });
            }
        }
    }
    let unit = |i: usize| {
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        c
    };
    match post.prior().kind() {
        PriorKind::Tikhonov => {}
        PriorKind::L1 => planes.extend((0..n).map(|i| Hyperplane { c: unit(i), b: 0.0 })),
        PriorKind::HuberTv { delta } => {
            for i in 0..n.saturating_sub(1) {
                let mut c = unit(i + 1);
                c[i] = -1.0;
                planes.push(Hyperplane {
                    c: c.clone(),
                    b: -delta,
                });
                planes.push(Hyperplane { c, b: delta });
            }
        }
    }
    planes.retain(|h| h.scale() > 0.0);
    planes
}

/// Singular set of `(x_1, …, x_k) ↦ ∫ g dx_{k+1}` given that of `g`:
/// hyperplanes parallel to the integrated axis, and the loci where two
/// breakpoints along it cross.
fn project(planes: &[Hyperplane], k: usize) -> Vec<Hyperplane> {
    let mut out: Vec<Hyperplane> = Vec::new();
    let push = |c: Vec<f64>, b: f64, out: &mut Vec<Hyperplane>| {
        let s = c.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        if s == 0.0 {
            return;
        }
        // normalize so the largest coefficient is +1, then deduplicate
        let lead = c.iter().copied().find(|x| x.abs() == s).unwrap_or(s);
        let c: Vec<f64> = c.iter().map(|x| x / lead).collect();
        let b = b / lead;
        let same = |h: &Hyperplane| {
            (h.b - b).abs() <= 1e-12 * (1.0 + b.abs())
                && h.c.iter().zip(&c).all(|(x, y)| (x - y).abs() <= 1e-12)
        };
        if !out.iter().any(same) {
            out.push(Hyperplane { c, b });
        }
    };
    let (cutting, parallel): (Vec<&Hyperplane>, Vec<&Hyperplane>) = planes
        .iter()
        .partition(|h| h.c[k].abs() > 1e-12 * h.scale());
    for h in parallel {
        push(h.c[..k].to_vec(), h.b, &mut out);
    }
    for (i, p) in cutting.iter().enumerate() {
        for q in &cutting[i + 1..] {
            let c: Vec<f64> = (0..k).map(|j| p.c[j] * q.c[k] - q.c[j] * p.c[k]).collect();
            let size = c.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
            if size <= 1e-12 * p.scale() * q.scale() {
                continue;
            }
            push(c, p.b * q.c[k] - q.b * p.c[k], &mut out);
        }
    }
    out
}

/// Grid coordinates `v = A u`, chosen so that the sharpest kinks of `−log p`
/// lie on coordinate hyperplanes. The Jacobian of the map is constant and
/// cancels under normalization.
struct GridCoordinates {
    forward: Vec<f64>,
    inverse: Vec<f64>,
    identity: bool,
    /// Every axis is a Poisson count rate `(Ku)_i`, bounded below by the floor.
    rate_axes: bool,
}

impl GridCoordinates {
    fn identity(n: usize, rate_axes: bool) -> Self {
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        Self {
            forward: eye.clone(),
            inverse: eye,
            identity: true,
            rate_axes,
        }
    }

    /// `A = K` for a square invertible operator.
    fn operator(post: &Posterior, rate_axes: bool) -> Option<Self> {
        let n = post.dim();
        let rows = operator_rows(post);
        if rows.len() != n {
            return None;
        }
        let forward: Vec<f64> = rows.into_iter().flatten().collect();
        let inverse = invert(&forward, n)?;
        Some(Self {
            forward,
            inverse,
            identity: false,
            rate_axes,
        })
    }

    fn new(post: &Posterior) -> Self {
        let n = post.dim();
        let fid = post.fidelity();
        let identity_op = fid.operator().is_identity();
        let prior = post.prior().kind();
        match fid.kind() {
            FidelityKind::Laplace if !identity_op => {
                if let Some(c) = Self::operator(post, false) {
                    return c;
                }
            }
            FidelityKind::Laplace => return Self::identity(n, false),
            FidelityKind::Poisson if prior == PriorKind::Tikhonov => {
                if identity_op {
                    return Self::identity(n, true);
                }
                if let Some(c) = Self::operator(post, true) {
                    return c;
                }
            }
            _ => {}
        }
        match prior {
            // v_1 = u_1, v_{i+1} = u_{i+1} − u_i
            PriorKind::HuberTv { .. } if n >= 2 => {
                let mut forward = vec![0.0; n * n];
                let mut inverse = vec![0.0; n * n];
                for i in 0..n {
                    forward[i * n + i] = 1.0;
                    if i > 0 {
                        forward[i * n + i - 1] = -1.0;
                    }
                    for j in 0..=i {
                        inverse[i * n + j] = 1.0;
                    }
                }
                Self {
                    forward,
                    inverse,
                    identity: false,
                    rate_axes: false,
                }
            }
            _ => Self::identity(n, fid.kind() == FidelityKind::Poisson && identity_op),
        }
    }

    fn to_u(&self, v: &[f64], u: &mut [f64]) {
        if self.identity {
            u.copy_from_slice(v);
        } else {
            mat_vec(&self.inverse, v, u);
        }
    }

    /// The hyperplane `c·u = b` in grid coordinates: `(A⁻ᵀ c)·v = b`.
    fn plane_to_v(&self, h: &Hyperplane) -> Hyperplane {
        let n = h.c.len();
        let c = (0..n)
            .map(|j| (0..n).map(|i| h.c[i] * self.inverse[i * n + j]).sum())
            .collect();
        Hyperplane { c, b: h.b }
    }

    /// Standard deviation of each `v` coordinate under the Laplace approximation.
    fn scales(&self, inv_hess: &[f64]) -> Vec<f64> {
        let n = (self.forward.len() as f64).sqrt() as usize;
        let a = &self.forward;
        (0..n)
            .map(|i| {
                let mut var = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        var += a[i * n + j] * inv_hess[j * n + k] * a[i * n + k];
                    }
                }
                if var.is_finite() && var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Nodes and weights on `[a, b]`, split into Gauss–Legendre panels at the kinks.
fn axis_rule(a: f64, b: f64, kinks: &[f64], total_nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let len = b - a;
    let gap = 1e-9 * len;
    let mut inner: Vec<f64> = kinks
        .iter()
        .copied()
        .filter(|&k| k > a + gap && k < b - gap)
        .collect();
    inner.sort_by(|x, y| x.total_cmp(y));
    let mut cuts = vec![a];
    for k in inner {
        if k - cuts[cuts.len() - 1] > gap {
            cuts.push(k);
        }
    }
    if b - cuts[cuts.len() - 1] <= gap && cuts.len() > 1 {
        cuts.pop();
    }
    cuts.push(b);
    let mut nodes = Vec::with_capacity(total_nodes + 16);
    let mut weights = Vec::with_capacity(total_nodes + 16);
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let count = ((total_nodes as f64 * (hi - lo) / len).round() as usize).max(8);
        let (t, tw) = gauss_legendre(count);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        nodes.extend(t.iter().map(|x| mid + half * x));
        weights.extend(tw.iter().map(|x| half * x));
    }
    (nodes, weights)
}

/// Grows each side of the box until `−log p` along grid axis `i` through the
/// centre has risen by at least `width²/2`, or the domain ends.
fn axis_bounds(
    post: &Posterior,
    coords: &GridCoordinates,
    vc: &[f64],
    i: usize,
    sigma: f64,
    width: f64,
) -> (f64, f64) {
    let mut u = vec![0.0; vc.len()];
    let mut at = |v: &[f64]| {
        coords.to_u(v, &mut u);
        neg_log(post, &u)
    };
    let f0 = at(vc);
    let rise = 0.5 * width * width;
    let floor = post.fidelity().poisson_floor();
    let mut bound = |dir: f64| -> f64 {
        let mut d = width * sigma;
        let mut v = vc.to_vec();
        for _ in 0..60 {
            let e = vc[i] + dir * d;
            if dir < 0.0 && coords.rate_axes && e <= floor {
                return floor;
            }
            v[i] = e;
            let f = at(&v);
            if !f.is_finite() || f - f0 >= rise {
                return e;
            }
            d *= 2.0;
        }
        vc[i] + dir * d
    };
    (bound(-1.0), bound(1.0))
}

/// Largest log-density on the face of the grid where axis `d` equals `at`.
fn face_peak(
    post: &Posterior,
    coords: &GridCoordinates,
    axes: &[Vec<f64>],
    d: usize,
    at: f64,
) -> f64 {
    let n = axes.len();
    let count: usize = (0..n).filter(|&k| k != d).map(|k| axes[k].len()).product();
    let mut v = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut best = f64::NEG_INFINITY;
    for mut flat in 0..count {
        for k in (0..n).rev() {
            if k == d {
                v[k] = at;
                continue;
            }
            let len = axes[k].len();
            v[k] = axes[k][flat % len];
            flat /= len;
        }
        coords.to_u(&v, &mut u);
        best = best.max(-neg_log(post, &u));
    }
    best
}

/// Iterated Gauss–Legendre rule over the box: every line along axis `k`
/// is split into panels where it crosses the singular set of the partial
/// integral over axes `k+1, …`.
struct NestedRule<'a> {
    levels: &'a [Vec<Hyperplane>],
    bounds: &'a [(f64, f64)],
    nodes: usize,
    /// Most nodes placed on a single line along each axis.
    longest: Vec<usize>,
    points: Vec<f64>,
    log_weights: Vec<f64>,
}

impl NestedRule<'_> {
    fn fill(&mut self, prefix: &mut Vec<f64>, log_weight: f64) {
        let k = prefix.len();
        let cuts: Vec<f64> = self.levels[k]
            .iter()
            .filter_map(|h| h.crossing(prefix))
            .collect();
        let (a, b) = self.bounds[k];
        let (x, w) = axis_rule(a, b, &cuts, self.nodes);
        self.longest[k] = self.longest[k].max(x.len());
        for (xi, wi) in x.into_iter().zip(w) {
            prefix.push(xi);
            let lw = log_weight + wi.ln();
            if k + 1 == self.bounds.len() {
                self.points.extend_from_slice(prefix);
                self.log_weights.push(lw);
            } else {
                self.fill(prefix, lw);
            }
            prefix.pop();
        }
    }
}

/// Builds the quadrature measure on a box around the MAP estimate. The box
/// lives in coordinates where the sharpest kinks of `−log p` are
/// axis-aligned (for a Huber-TV prior these are `(u_1, u_2 − u_1, …)`), and
/// the remaining kinks and domain edges split the integration lines into
/// panels, so the rule converges rapidly despite the nonsmooth density.
pub fn quadrature_posterior(post: &Posterior, cfg: &QuadratureConfig) -> Result<QuadratureMeasure> {
    let n = post.dim();
    if n > MAX_QUADRATURE_DIM {
        return Err(Error::Unsupported(format!(
            "quadrature supports dimension ≤ {MAX_QUADRATURE_DIM}, got {n}"
        )));
    }
    if cfg.nodes_per_dim < 2 || !(cfg.width > 0.0 && cfg.width.is_finite()) {
        return Err(Error::Config(
            "quadrature needs ≥ 2 nodes per axis and a positive width".into(),
        ));
    }
    let centre = solve_map(post, &SolverConfig::default())?.estimate;
    let coords = GridCoordinates::new(post);
    let sigma = coords.scales(&inverse_hessian(post, &centre));
    let mut vc = vec![0.0; n];
    mat_vec(&coords.forward, &centre, &mut vc);
    let mut grid_bounds: Vec<(f64, f64)> = (0..n)
        .map(|i| axis_bounds(post, &coords, &vc, i, sigma[i], cfg.width))
        .collect();
    let build = |b: &[(f64, f64)]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| axis_rule(b[i].0, b[i].1, &[], cfg.nodes_per_dim).0)
            .collect()
    };
    let mut axes = build(&grid_bounds);

    // the axis search only sees the conditional through the centre; widen any
    // face on which the density has not yet fallen by width²/2
    let threshold = -neg_log(post, &centre) - 0.5 * cfg.width * cfg.width;
    let floor = post.fidelity().poisson_floor();
    for _ in 0..MAX_GROW_ROUNDS {
        let mut grown = false;
        for d in 0..n {
            for upper in [false, true] {
                let (a, b) = grid_bounds[d];
                let at = if upper { b } else { a };
                if face_peak(post, &coords, &axes, d, at) <= threshold {
                    continue;
                }
                let grow = GROW_FACTOR * (at - vc[d]);
                if upper {
                    grid_bounds[d].1 = vc[d] + grow;
                } else if !(coords.rate_axes && a <= floor) {
                    grid_bounds[d].0 = vc[d] + grow;
                } else {
                    continue;
                }
                grown = true;
            }
        }
        if !grown {
            break;
        }
        axes = build(&grid_bounds);
    }

    let mut levels = vec![Vec::new(); n];
    levels[n - 1] = singular_set(post)
        .iter()
        .map(|h| coords.plane_to_v(h))
        .collect();
    for k in (1..n).rev() {
        levels[k - 1] = project(&levels[k], k);
    }
    let mut rule = NestedRule {
        levels: &levels,
        bounds: &grid_bounds,
        nodes: cfg.nodes_per_dim,
        longest: vec![0; n],
        points: Vec::new(),
        log_weights: Vec::new(),
    };
    rule.fill(&mut Vec::with_capacity(n), 0.0);
    let NestedRule {
        longest,
        points: grid,
        log_weights: mut lw,
        ..
    } = rule;

    let mut x = vec![0.0; n];
    let mut max_lw = f64::NEG_INFINITY;
    for (v, l) in grid.chunks_exact(n).zip(lw.iter_mut()) {
        coords.to_u(v, &mut x);
        *l -= neg_log(post, &x);
        max_lw = max_lw.max(*l);
    }
    if !max_lw.is_finite() {
        return Err(Error::OutsideDomain);
    }

    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut dropped = 0.0;
    let mut sum = 0.0;
    for (v, l) in grid.chunks_exact(n).zip(&lw) {
        let w = (l - max_lw).exp();
        if w >= NEGLIGIBLE_WEIGHT {
            coords.to_u(v, &mut x);
            points.extend_from_slice(&x);
            weights.push(w);
            sum += w;
        } else if w > 0.0 {
            dropped += w;
        }
    }
    weights.iter_mut().for_each(|w| *w /= sum);

    // bounding box in u of the grid's corners
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    let mut corner = vec![0.0; n];
    for mask in 0..(1usize << n) {
        for (d, c) in corner.iter_mut().enumerate() {
            let (a, b) = grid_bounds[d];
            *c = if mask >> d & 1 == 1 { b } else { a };
        }
        coords.to_u(&corner, &mut x);
        for (bd, xi) in bounds.iter_mut().zip(&x) {
            bd.0 = bd.0.min(*xi);
            bd.1 = bd.1.max(*xi);
        }
    }
    Ok(QuadratureMeasure {
        dim: n,
        bounds,
        centre,
        nodes_per_axis: longest,
        points,
        weights,
        dropped_mass: dropped / (sum + dropped),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Fidelity, ForwardOperator, Prior};
    use approx::assert_abs_diff_eq;

    fn scalar(kind: FidelityKind, f: f64) -> Posterior {
        let fid = Fidelity::new(kind, ForwardOperator::identity(1).unwrap(), vec![f]).unwrap();
        Posterior::new(fid, Prior::tikhonov(), 1.0).unwrap()
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1, 2, 5, 16, 257] {
            let (x, w) = gauss_legendre(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-12);
            // ∫ t^{2n-2} dt = 2/(2n-1)
            let deg = 2 * n - 2;
            let integral: f64 = x
                .iter()
                .zip(&w)
                .map(|(t, wt)| wt * t.powi(deg as i32))
                .sum();
            assert_abs_diff_eq!(integral, 2.0 / (deg as f64 + 1.0), epsilon = 1e-12);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn scalar_gaussian_mean_and_mass() {
        let post = scalar(FidelityKind::Gaussian, 3.0);
        let q = quadrature_posterior(&post, &QuadratureConfig::default()).unwrap();
        assert_abs_diff_eq!(q.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.mean()[0], 2.0, epsilon = 1e-10);
        // precision 3 → variance 1/3
        assert_abs_diff_eq!(q.variance()[0], 1.0 / 3.0, epsilon = 1e-10);
        let (a, b) = q.bounds()[0];
        assert!(a < 2.0 && 2.0 < b);
        let one = q.expectation(|_| Ok(vec![1.0])).unwrap();
        assert_abs_diff_eq!(one.value[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn node_doubling_is_stable() {
        for (kind, f) in [
            (FidelityKind::Gaussian, 3.0),
            (FidelityKind::Poisson, 2.0),
            (FidelityKind::Laplace, 3.0),
        ] {
            let post = scalar(kind, f);
            let a = quadrature_posterior(&post, &QuadratureConfig::default())
                .unwrap()
                .mean();
            let cfg = QuadratureConfig {
                nodes_per_dim: 513,
                ..QuadratureConfig::default()
            };
            let b = quadrature_posterior(&post, &cfg).unwrap().mean();
            assert!((a[0] - b[0]).abs() < 1e-8, "{kind:?}: {} vs {}", a[0], b[0]);
        }
    }

    #[test]
    fn excluded_nodes_are_reported() {
        let post = scalar(FidelityKind::Gaussian, 0.0);
        let q = quadrature_posterior(&post, &QuadratureConfig::default()).unwrap();
        let e = q
            .expectation(|x| Ok(vec![if x[0] < 0.0 { f64::INFINITY } else { x[0] }]))
            .unwrap();
        assert!(e.coverage_warning.is_some());
        // the odd rule puts one node exactly at the symmetric centre
        assert!(
            (e.excluded_weight - 0.5).abs() < 0.02,
            "{}",
            e.excluded_weight
        );
        assert!(q.expectation(|_| Ok(vec![f64::NAN])).is_err());
    }

    #[test]
    fn dimension_four_is_unsupported() {
        let fid = Fidelity::new(
            FidelityKind::Gaussian,
            ForwardOperator::identity(4).unwrap(),
            vec![0.0; 4],
        )
        .unwrap();
        let post = Posterior::new(fid, Prior::tikhonov(), 1.0).unwrap();
        assert!(matches!(
            quadrature_posterior(&post, &QuadratureConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn projection_keeps_parallel_planes_and_crossings() {
        let planes = [
            // x + y = 1 and x − y = 0 cross at x = 0.5
            Hyperplane {
                c: vec![1.0, 1.0],
                b: 1.0,
            },
            Hyperplane {
                c: vec![1.0, -1.0],
                b: 0.0,
            },
            // parallel to y
            Hyperplane {
                c: vec![2.0, 0.0],
                b: 3.0,
            },
            // parallel to the first, never crosses it
            Hyperplane {
                c: vec![2.0, 2.0],
                b: 5.0,
            },
        ];
        let mut points: Vec<f64> = project(&planes, 1)
            .iter()
            .map(|h| h.crossing(&[]).unwrap())
            .collect();
        points.sort_by(f64::total_cmp);
        // x − y = 0 meets 2x + 2y = 5 at x = 1.25
        assert_eq!(points, vec![0.5, 1.25, 1.5]);
    }
}
