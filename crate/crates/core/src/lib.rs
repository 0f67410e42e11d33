//! Bivariate causal direction discovery by Bayesian model selection.
//!
//! Fits a Bayesian causal model for each direction (GPLVM-based marginals and
//! conditionals, plus an analytic linear-Gaussian family), compares
//! approximate marginal likelihoods, and quantifies the intrinsic probability
//! of error by Monte-Carlo simulation from the model priors.

pub mod cli;
pub mod data;
pub mod decision;
pub mod error;
pub mod gp;
pub mod optimize;
pub mod kernels;
pub mod linalg;
pub mod lingauss;
pub mod prior;
pub mod quadrature;
pub mod seeds;

pub use error::{Error, Result};
