//! The posterior `exp(−E(Ku; f) − αR(u))` and its building blocks.

mod fidelity;
mod operator;
mod posterior;
mod prior;

pub use fidelity::{Fidelity, FidelityKind, DEFAULT_POISSON_FLOOR};
pub use operator::ForwardOperator;
pub use posterior::{LogGradient, Posterior};
pub use prior::{Prior, PriorKind, DEFAULT_HUBER_DELTA};
