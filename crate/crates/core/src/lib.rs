//! Nonparametric estimation of random-coefficient mixing distributions in
//! the Mixed Logit model on a fixed quasi-random support grid.
//!
//! The estimator regresses one-hot choices on grid-point choice
//! probabilities under simplex constraints ([`estimator::fit_fixed_grid`]),
//! with a regularized variant that truncates the design's singular
//! directions ([`estimator::fit_pcr`]). Supporting pieces: exact simulation
//! oracles ([`kernels`]), Halton grids ([`grid`]), the constrained
//! least-squares solver with auditable KKT certificates ([`solver`]),
//! ill-posedness diagnostics ([`diagnostics`]), and a reproducible Monte
//! Carlo harness ([`mc`]).

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod kernels;
pub mod mc;
pub mod solver;

pub use error::{Error, Result};
