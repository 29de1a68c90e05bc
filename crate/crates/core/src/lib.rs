//! Learning linear loss functions from observations of trained models.
//!
//! Given a handful of trained models, each described by its validation error
//! and a feature vector `φ(θ)` (plus, optionally, the validation gradient and
//! the feature Jacobian), [`learnloss::learn_loss`] finds weights `λ` such that
//! minimizing `λ·φ(θ)` ranks the best observed model first while tracking
//! validation error as closely as possible. [`tuneloss::tune_loss`] wraps this
//! in an outer loop that alternates learning and training.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and the
//! experiment harness live in the `lossforge` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod features;
pub mod learnloss;
pub mod linalg;
pub mod losscore;
pub mod numopt;
pub mod oracle;
pub mod trainer;
pub mod tuneloss;

pub(crate) mod math;

pub use error::{Error, Result};
pub use learnloss::{default_epsilon, learn_loss, LearnLossResult};
pub use losscore::{cost, evaluate_loss, CostParams, Gradients, Hypercube, LinearLoss, Observation};
pub use numopt::{check_lp_feasibility, solve_qp, QpProblem, QpSolution, QpStatus};
