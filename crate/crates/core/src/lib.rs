//! Policy learning under an adverse-event constraint.
//!
//! A treatment policy is learned as `σ_β ∘ ψ`, where `ψ` lives in the convex
//! hull of shifted logistic atoms `x ↦ 2·expit(θᵀx) − 1` and the constant `−1`.
//! For each `(λ, β)` on a grid, the Lagrangian
//!
//! ```text
//! ℒ(ψ) = E[ψ² − 2ψ·Δμ] + λ·(E[σ_β(ψ)·Δν] − α)
//! ```
//!
//! is minimized by Frank–Wolfe, optionally alternating with targeted
//! fluctuations of the outcome and adverse-event regressions. Candidates are
//! then assessed on a held-out fold with one-sided 95% bounds, and the best
//! confidently feasible policy is selected.
//!
//! Module map:
//!
//! - [`data`]: observations, datasets, fold splits, empirical measures
//! - [`scaling`]: the σ_β family
//! - [`policy`]: score functions, smooth and threshold policies
//! - [`criteria`]: risk, constraint, value, Lagrangian, influence curves
//! - [`frankwolfe`]: Frank–Wolfe with an SGD linear oracle and certificates
//! - [`nuisance`]: logistic GLM and oracle nuisance models
//! - [`targeting`]: the alternating fluctuation/minimization procedure
//! - [`evaluation`]: targeted assessment and confidence bounds
//! - [`synthdata`]: simulation scenarios and oracle metrics
//! - [`pipeline`]: the grid search and selection
//! - [`certify`]: a toy problem with an exact oracle for auditing convergence

pub mod certify;
pub mod criteria;
pub mod data;
mod error;
pub mod evaluation;
pub mod frankwolfe;
pub mod math;
pub mod nuisance;
pub mod pipeline;
pub mod policy;
pub mod scaling;
pub mod synthdata;
pub mod targeting;

pub use error::{Error, Result};

/// Version tag written into every JSON manifest this crate produces.
pub const SCHEMA_VERSION: &str = "pluc/1";
