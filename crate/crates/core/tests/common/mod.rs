#![allow(dead_code)]

use bregest::map_solver::{solve_map, SolverConfig};
use bregest::model::{Fidelity, FidelityKind, ForwardOperator, Posterior, Prior};

pub const BLUR2: [f64; 2] = [0.75, 0.25];
pub const BLUR3: [f64; 3] = [0.2, 0.6, 0.2];

pub fn posterior(
    kind: FidelityKind,
    op: ForwardOperator,
    f: Vec<f64>,
    prior: Prior,
    alpha: f64,
) -> Posterior {
    Posterior::new(Fidelity::new(kind, op, f).unwrap(), prior, alpha).unwrap()
}

/// `K = 1`, `α = 1`, Tikhonov prior.
pub fn scalar(kind: FidelityKind, f: f64) -> Posterior {
    posterior(
        kind,
        ForwardOperator::identity(1).unwrap(),
        vec![f],
        Prior::tikhonov(),
        1.0,
    )
}

pub fn gaussian_scalar() -> Posterior {
    scalar(FidelityKind::Gaussian, 3.0)
}

pub fn poisson_scalar() -> Posterior {
    scalar(FidelityKind::Poisson, 2.0)
}

pub fn laplace_scalar() -> Posterior {
    scalar(FidelityKind::Laplace, 3.0)
}

pub fn huber() -> Prior {
    Prior::huber_tv(bregest::model::DEFAULT_HUBER_DELTA).unwrap()
}

/// Two-pixel problems with a Huber-TV prior.
pub fn gaussian_huber() -> Posterior {
    let op = ForwardOperator::convolution1d(2, BLUR2.to_vec()).unwrap();
    posterior(FidelityKind::Gaussian, op, vec![3.0, 1.0], huber(), 1.0)
}

pub fn poisson_huber() -> Posterior {
    let op = ForwardOperator::convolution1d(2, BLUR2.to_vec()).unwrap();
    posterior(FidelityKind::Poisson, op, vec![3.0, 1.0], huber(), 1.0)
}

pub fn laplace_huber() -> Posterior {
    posterior(
        FidelityKind::Laplace,
        ForwardOperator::identity(2).unwrap(),
        vec![3.0, 1.0],
        huber(),
        1.0,
    )
}

pub fn poisson_blur2() -> Posterior {
    let op = ForwardOperator::convolution1d(2, BLUR2.to_vec()).unwrap();
    posterior(
        FidelityKind::Poisson,
        op,
        vec![2.0, 1.0],
        Prior::tikhonov(),
        1.0,
    )
}

pub fn gaussian_blur2() -> Posterior {
    let op = ForwardOperator::convolution1d(2, BLUR2.to_vec()).unwrap();
    posterior(
        FidelityKind::Gaussian,
        op,
        vec![3.0, 1.0],
        Prior::tikhonov(),
        1.0,
    )
}

pub fn laplace_identity2() -> Posterior {
    posterior(
        FidelityKind::Laplace,
        ForwardOperator::identity(2).unwrap(),
        vec![3.0, 1.0],
        Prior::tikhonov(),
        1.0,
    )
}

/// Four-pixel Poisson deblurring, sampled by MCMC.
pub fn poisson_blur4() -> Posterior {
    let op = ForwardOperator::convolution1d(4, BLUR3.to_vec()).unwrap();
    posterior(
        FidelityKind::Poisson,
        op,
        vec![3.0, 2.0, 4.0, 2.0],
        Prior::tikhonov(),
        1.0,
    )
}

/// The three fidelities crossed with Tikhonov and Huber-TV priors.
pub fn six_fixtures() -> Vec<(&'static str, Posterior)> {
    vec![
        ("gaussian_tikhonov", gaussian_scalar()),
        ("poisson_tikhonov", poisson_scalar()),
        ("laplace_tikhonov", laplace_scalar()),
        ("gaussian_huber", gaussian_huber()),
        ("poisson_huber", poisson_huber()),
        ("laplace_huber", laplace_huber()),
    ]
}

pub fn map(post: &Posterior) -> Vec<f64> {
    let r = solve_map(
        post,
        &SolverConfig {
            tolerance: 1e-12,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    r.estimate
}
