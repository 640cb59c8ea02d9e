//! Finite mixtures of multivariate logistic distributions.
//!
//! The component family has joint cdf
//! `L(x; mu, sigma) = [1 + sum_k exp(-(x_k - mu_k) / sigma_k)]^-1`. On top of
//! exact evaluation and sampling ([`mld`]) and mixtures ([`mixture`]), the
//! crate provides EM fitting ([`estimation`]) and numerical checks of
//! identifiability ([`identifiability`]): Gram-matrix linear independence of
//! component cdfs, tail-limit and Vandermonde probes for the univariate case,
//! coordinate collapse for shared-scale families, and a sup-norm equality test
//! between mixtures.

#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod estimation;
pub mod identifiability;
pub mod json;
pub mod mixture;
pub mod mld;
pub mod numeric;
pub mod quadrature;
pub mod rng;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use estimation::{em_fit, FitConfig, FitResult};
pub use mixture::MixtureModel;
pub use mld::MldParams;
