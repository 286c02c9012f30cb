//! MAP and conditional-mean (CM) point estimation for linear inverse problems
//! `f = K u ⊙ η` with log-concave posteriors `p(u|f) ∝ exp(-E(u; K, f) - α R(u))`.
//!
//! The crate is `no_std` (it needs `alloc`). It provides:
//!
//! - [`model`]: forward operators, Gaussian/Poisson/Laplace fidelities,
//!   Tikhonov/Huber-TV/ℓ1 priors and the posterior they induce.
//! - [`bregman`]: Bregman distances and the MAP- and CM-oriented cost
//!   functionals assembled from them.
//! - [`map_solver`]: accelerated proximal gradient for the MAP estimate,
//!   the optimality residual and the MAP-centred log-density.
//! - [`cm_estimator`]: random-walk Metropolis and MALA samplers, chain
//!   diagnostics, and an iterated Gauss–Legendre quadrature oracle for n ≤ 3.
//! - [`bayes_cost`]: empirical Bayes costs over chains or quadrature measures
//!   and their minimization.
//! - [`verify`]: numerical checks of the Bregman-cost optimality statements,
//!   each producing a [`verify::VerificationReport`].
#![no_std]

extern crate alloc;

pub mod bayes_cost;
pub mod bregman;
pub mod cm_estimator;
mod error;
pub mod map_solver;
pub mod model;
pub mod rng;
mod vecops;
pub mod verify;

pub use error::{Error, Result};
