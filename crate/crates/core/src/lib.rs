//! Trust-region policy optimization with uncertainty-aware trust regions.
//!
//! The crate implements two policy update rules for diagonal-Gaussian MLP
//! policies:
//!
//! * TRPO: natural-gradient direction from conjugate gradient on the damped
//!   Fisher matrix, followed by a backtracking line search.
//! * UA-TRPO: the trust-region matrix `M = F + c·R_n²·Σ` adds a penalty for
//!   the sampling covariance of the policy gradient, and the update direction
//!   is the pseudoinverse solution `M⁺g` restricted to a randomized
//!   low-rank subspace of the range of `M` (optionally with EMA sketches).
//!
//! Everything is matrix-free in parameter space: trust-region matrices are
//! only ever touched through products with vectors or thin sketches.
//!
//! Module map:
//!
//! * [`linalg`]: dense matrices, QR / Jacobi decompositions, CG, seeded RNG streams.
//! * [`policy`]: Gaussian policy, score vectors, analytic KL, checkpoints.
//! * [`envs`]: analytic control environments and rollout collection.
//! * [`estimation`]: GAE, value learning, gradient and trust-region operators.
//! * [`trust_region`]: confidence radius, robust penalty, subspace update direction, EMA sketches.
//! * [`optimizers`]: one-iteration TRPO and UA-TRPO steps.
//! * [`harness`]: multi-seed experiments, CVaR, KL-ratio diagnostics, CSV and SVG output.

pub mod envs;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub(crate) mod mlp;
pub mod optimizers;
pub mod policy;
pub mod selftest;
pub mod trust_region;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, LinearOperator, SeededRng};
pub use optimizers::{StepReport, TrpoConfig, UaTrpoConfig};
pub use policy::{PolicyArch, PolicyParams, PolicySnapshot};
