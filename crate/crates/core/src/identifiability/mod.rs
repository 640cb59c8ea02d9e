//! Numerical identifiability checks for logistic mixtures.
//!
//! A finite-mixture family is identifiable exactly when its component cdfs are
//! linearly independent. The submodules probe that property from several
//! angles:
//!
//! * [`gram`]: smallest eigenvalue of the weighted Gram matrix of component
//!   cdfs (singular iff the cdfs are dependent).
//! * [`univariate`]: the tail limit that forces the coefficients of a
//!   vanishing combination to sum to zero, the reflection `x -> -x` that
//!   follows from it, and the Vandermonde system in `exp(mu/sigma)`.
//! * [`collapse`]: merging two coordinates of a shared-scale family into one,
//!   which reduces a `p`-dimensional question to `p - 1` dimensions.
//! * [`equality`]: grid sup-norm comparison of two mixtures plus parameter
//!   matching up to relabeling.
//! * [`trial`]: randomized trials over covered regimes, and an exploratory
//!   search for near-coincident mixtures with per-component scales.

pub mod collapse;
pub mod equality;
pub mod gram;
pub mod trial;
pub mod univariate;

pub use collapse::{collapse_pair, find_separating_offsets};
pub use equality::{mixture_equality_test, EqualityReport, GridSpec, Verdict};
pub use gram::{gram_min_eigenvalue, GramReport, GramSpec};
pub use trial::{identifiability_trial, probe_open_problem, ProbeReport, Scenario, TrialOutcome, TrialSummary};
pub use univariate::{reflect_combination, tail_coefficient_sum, vandermonde_check, VandermondeReport};

use crate::error::{check_dim, Error, Result};
use crate::mld::MldParams;

/// Real coefficients attached to component cdfs: `x -> sum_i d_i L_i(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCombination {
    coeffs: Vec<f64>,
    components: Vec<MldParams>,
}

impl LinearCombination {
    pub fn new(coeffs: Vec<f64>, components: Vec<MldParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("a combination needs at least one term".into()));
        }
        check_dim(components.len(), coeffs.len())?;
        crate::error::check_finite(&coeffs, "coefficients")?;
        let p = components[0].p();
        for c in &components {
            check_dim(p, c.p())?;
        }
        Ok(Self { coeffs, components })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn components(&self) -> &[MldParams] {
        &self.components
    }

    pub fn p(&self) -> usize {
        self.components[0].p()
    }

    /// True when all components carry the same scale vector.
    pub fn shared_scale(&self) -> bool {
        let first = self.components[0].sigma();
        self.components.iter().all(|c| c.sigma() == first)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.p(), x.len())?;
        crate::error::check_finite(x, "point")?;
        Ok(self
            .coeffs
            .iter()
            .zip(&self.components)
            .map(|(d, c)| d * c.cdf_unchecked(x))
            .sum())
    }
}

/// Component distance used for matching: the largest of `|d mu_k|` and
/// `|d ln sigma_k|` over coordinates.
pub fn component_distance(a: &MldParams, b: &MldParams) -> f64 {
    let mu = a.mu().iter().zip(b.mu()).map(|(x, y)| (x - y).abs());
    let sigma = a.sigma().iter().zip(b.sigma()).map(|(x, y)| (x.ln() - y.ln()).abs());
    mu.chain(sigma).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combination_validation_and_eval() {
        let a = MldParams::new(vec![0.0], vec![1.0]).unwrap();
        let b = MldParams::new(vec![1.0], vec![2.0]).unwrap();
        assert!(LinearCombination::new(vec![1.0], vec![a.clone(), b.clone()]).is_err());
        assert!(LinearCombination::new(vec![], vec![]).is_err());
        let lc = LinearCombination::new(vec![2.0, -1.0], vec![a, b]).unwrap();
        assert!(!lc.shared_scale());
        let v = lc.eval(&[1.0]).unwrap();
        let expected = 2.0 / (1.0 + (-1.0f64).exp()) - 0.5;
        assert!((v - expected).abs() < 1e-15);
        assert!(lc.eval(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn distance_uses_log_scale() {
        let a = MldParams::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let b = MldParams::new(vec![0.05, 1.0], vec![1.0, std::f64::consts::E]).unwrap();
        assert!((component_distance(&a, &b) - 1.0).abs() < 1e-15);
    }
}
