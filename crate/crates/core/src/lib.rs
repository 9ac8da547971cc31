//! Hierarchical random-effects meta-regression for total species richness.
//!
//! Richness estimates `Ĉ_i` with standard errors `σ̂_i` are modelled as
//! `Ĉ_i = β₀ + x_iᵀβ + u_i + ε_i` with `u_i ~ N(0, σ²_u)` and
//! `ε_i ~ N(0, σ̂²_i)`. The crate provides:
//!
//! - [`model`]: boundary-constrained REML fitting of `(β₀, β, σ²_u)`.
//! - [`inference`]: Wald, global chi-square and Q homogeneity tests, plus
//!   residual diagnostics.
//! - [`mixed`]: a grouped random-intercept variant with a second variance
//!   component.
//! - [`io`] and [`estimator`]: frequency-count and estimate tables, Chao1, and
//!   an external estimator hook.
//! - [`sim`]: multinomial resampling experiments for empirical size and power,
//!   and a parametric bootstrap check of reported standard errors.

#![forbid(unsafe_code)]

pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod mixed;
pub mod model;
pub mod optimize;
pub mod sim;
pub mod special;

pub use error::{BettaError, Result};
pub use inference::{global_test, homogeneity_test, residual_diagnostics, wald_tests, TestKind, TestResult};
pub use io::{chao1, read_estimates, read_frequency_table, FrequencyCountTable, RichnessEstimate};
pub use mixed::{fit_betta_random, GroupedDataset, MixedFit};
pub use model::{fit_betta, restricted_log_likelihood, BettaFit, Dataset, RichnessObservation};
