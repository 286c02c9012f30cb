use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vecops::sign0;

/// Default Huber smoothing width for the TV prior.
pub const DEFAULT_HUBER_DELTA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorKind {
    /// `½‖u‖₂²`
    Tikhonov,
    /// `Σ h_δ((Du)_i)` with forward differences `(Du)_i = u_{i+1} − u_i`.
    HuberTv { delta: f64 },
    /// `‖u‖₁`
    L1,
}

/// Convex regularizer `R`, scaled by a positive constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    kind: PriorKind,
    scale: f64,
}

/// Huber function, quadratic on `|t| ≤ δ` and `|t| − δ/2` outside.
fn huber(t: f64, delta: f64) -> f64 {
    if t.abs() <= delta {
        t * t / (2.0 * delta)
    } else {
        t.abs() - delta / 2.0
    }
}

fn huber_derivative(t: f64, delta: f64) -> f64 {
    if t.abs() <= delta {
        t / delta
    } else {
        sign0(t)
    }
}

impl Prior {
    pub fn new(kind: PriorKind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(
                "prior scale must be positive".into(),
            ));
        }
        if let PriorKind::HuberTv { delta } = kind {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidParameter(
                    "Huber delta must be positive".into(),
                ));
            }
        }
        Ok(Self { kind, scale })
    }

    pub fn tikhonov() -> Self {
        Self {
            kind: PriorKind::Tikhonov,
            scale: 1.0,
        }
    }

    pub fn huber_tv(delta: f64) -> Result<Self> {
        Self::new(PriorKind::HuberTv { delta }, 1.0)
    }

    pub fn l1() -> Self {
        Self {
            kind: PriorKind::L1,
            scale: 1.0,
        }
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, PriorKind::L1)
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        if u.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite);
        }
        let base = match self.kind {
            PriorKind::Tikhonov => 0.5 * u.iter().map(|x| x * x).sum::<f64>(),
            PriorKind::L1 => u.iter().map(|x| x.abs()).sum(),
            PriorKind::HuberTv { delta } => u.windows(2).map(|w| huber(w[1] - w[0], delta)).sum(),
        };
        Ok(self.scale * base)
    }

    /// A subgradient of `R` at `u`; the ℓ1 selection uses `sign(0) = 0`.
    pub fn subgradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite);
        }
        let s = self.scale;
        Ok(match self.kind {
            PriorKind::Tikhonov => u.iter().map(|x| s * x).collect(),
            PriorKind::L1 => u.iter().map(|&x| s * sign0(x)).collect(),
            PriorKind::HuberTv { delta } => {
                // Dᵀ h'(Du)
                let mut g = vec![0.0; u.len()];
                for (i, w) in u.windows(2).enumerate() {
                    let d = s * huber_derivative(w[1] - w[0], delta);
                    g[i] -= d;
                    g[i + 1] += d;
                }
                g
            }
        })
    }

    /// `true` when `u` has a zero entry under the ℓ1 prior.
    pub fn at_kink(&self, u: &[f64]) -> bool {
        matches!(self.kind, PriorKind::L1) && u.contains(&0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn examples() {
        let t = Prior::tikhonov();
        assert_relative_eq!(t.value(&[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(t.subgradient(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);

        let l = Prior::l1();
        assert_relative_eq!(l.value(&[-2.0, 0.0, 1.0]).unwrap(), 3.0);
        assert_eq!(
            l.subgradient(&[-2.0, 0.0, 1.0]).unwrap(),
            vec![-1.0, 0.0, 1.0]
        );

        let h = Prior::huber_tv(1.0).unwrap();
        assert_eq!(h.value(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(h.subgradient(&[2.0, 2.0, 2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn huber_pieces() {
        let h = Prior::huber_tv(0.5).unwrap();
        // differences 0.25 (quadratic) and 2 (linear)
        let u = [0.0, 0.25, 2.25];
        let expect = 0.25 * 0.25 / 1.0 + (2.0 - 0.25);
        assert_relative_eq!(h.value(&u).unwrap(), expect, epsilon = 1e-15);
        let g = h.subgradient(&u).unwrap();
        assert_relative_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(g[1], 0.5 - 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_at_origin_and_scaling() {
        for p in [
            Prior::tikhonov(),
            Prior::l1(),
            Prior::huber_tv(0.1).unwrap(),
        ] {
            assert_eq!(p.value(&[0.0; 4]).unwrap(), 0.0);
        }
        let p = Prior::new(PriorKind::Tikhonov, 3.0).unwrap();
        assert_relative_eq!(p.value(&[1.0]).unwrap(), 1.5);
        assert!(Prior::new(PriorKind::L1, 0.0).is_err());
        assert!(Prior::huber_tv(-1.0).is_err());
    }
}
