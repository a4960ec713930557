//! Sparse Bayesian probit regression with a spike-and-slab (binary mask)
//! prior: mean-field coordinate ascent, a collapsed blocked Gibbs sampler,
//! simulation and cross-validation tooling, and the command-line driver.

pub mod cavi;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod gibbs;
pub mod kernels;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
