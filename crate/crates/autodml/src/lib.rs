//! Automatic debiased machine learning for linear functionals of
//! regression-like targets.
//!
//! The estimand is `theta = E[m(W, gamma)]` where `gamma` solves a
//! conditional moment restriction `E[rho(W, gamma(X)) | X] = 0` and `m` is
//! linear in `gamma`. The package learns `gamma` and a debiasing function
//! `alpha` on separate folds, combines them through the orthogonal moment
//! `m(W, gamma) + alpha(X) * rho(W, gamma)`, and reports a cross-fitted
//! point estimate with a plug-in asymptotic variance.
//!
//! The debiasing function is learned without any analytic form for the
//! functional's representer: the learner only evaluates `m` on candidate
//! functions and reweights squared deviations by an estimate of the
//! residual derivative. Synthetic designs with closed-form representers
//! live in [`sim`] so the automatic route can be checked against exact
//! targets.

pub mod data;
pub mod error;
pub mod estimator;
pub mod funcspace;
pub mod problems;
pub mod riesz;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
