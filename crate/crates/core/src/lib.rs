//! Estimation engine for stochastic differential equations whose drift and
//! diffusion parameters vary smoothly with covariates.
//!
//! Parameters are additive penalized-spline functions on a link scale.
//! Spline coefficients are random effects integrated out by a Laplace
//! approximation; smoothing parameters and fixed effects maximize the
//! resulting marginal likelihood. Noisy 2-D positions are handled through a
//! Kalman filter. Fitted models feed simulation-based confidence bands and
//! posterior predictive checks.

pub mod basis;
pub mod data;
pub mod error;
pub mod ppc;
pub mod estimate;
pub mod jet;
pub mod sde;
pub mod simstudy;
pub mod synth;
pub mod ssm;
pub mod uncertainty;

pub use basis::{build_design, build_spline_basis, eval_smooth, DesignSet, Formula, TermKind, TermSpec};
pub use data::{Column, Cov2, SeriesData};
pub use error::{Error, Result};
pub use sde::{Family, Link, Normal};
