//! Weighted Gram matrix of component cdfs.
//!
//! `G_ij = ∫ L_i(x) L_j(x) w(x) dx` with `w` the product of standard logistic
//! densities. Since `w > 0` everywhere, `G` is singular exactly when some
//! nonzero combination of the cdfs vanishes almost everywhere. Substituting
//! `u_k = 1 / (1 + exp(-x_k))` turns `w(x) dx` into `du` on the unit cube,
//! which is then integrated by tensor-product Gauss–Legendre.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::mld::MldParams;
use crate::numeric::{logistic, logit};
use crate::quadrature::{for_each_tensor_point, GaussLegendre};

/// Largest supported dimension; the tensor rule costs `nodes^p` points.
pub const MAX_GRAM_DIM: usize = 3;

/// Eigenvalues below `RANK_TOL_REL * largest` count as zero.
pub const RANK_TOL_REL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramSpec {
    pub nodes_per_axis: usize,
    /// Integration box `[-bound, bound]^p` in the original coordinates.
    pub bound: f64,
    /// Relative change of the smallest eigenvalue under node doubling above
    /// which the result is flagged as unconverged.
    pub convergence_tol: f64,
}

impl Default for GramSpec {
    fn default() -> Self {
        Self {
            nodes_per_axis: 64,
            bound: 40.0,
            convergence_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GramReport {
    #[serde(skip)]
    pub gram: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub numerical_rank: usize,
    pub rank_tol: f64,
    pub nodes_per_axis: usize,
    /// Smallest eigenvalue with twice as many nodes per axis.
    pub refined_min_eigenvalue: f64,
    pub converged: bool,
    pub quadrature: String,
}

impl GramReport {
    /// Smallest eigenvalue relative to the largest.
    pub fn relative_min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue / self.max_eigenvalue
    }
}

/// Gram matrix of the component cdfs under the product-logistic weight.
pub fn gram_matrix(components: &[MldParams], nodes_per_axis: usize, bound: f64) -> Result<DMatrix<f64>> {
    if components.is_empty() {
        return Err(Error::InvalidParameter("need at least one component".into()));
    }
    let p = components[0].p();
    for c in components {
        check_dim(p, c.p())?;
    }
    if p > MAX_GRAM_DIM {
        return Err(Error::Unsupported(format!(
            "Gram quadrature supports p <= {MAX_GRAM_DIM}, got {p}"
        )));
    }
    let s = components.len();
    let rule = GaussLegendre::new(nodes_per_axis);
    let (u, w) = rule.on_interval(logistic(-bound), logistic(bound));
    let x: Vec<f64> = u.iter().map(|&u| logit(u)).collect();

    // split the outermost axis across threads; partial sums are combined in
    // node order so the result does not depend on the thread count
    let partials: Vec<Vec<f64>> = (0..x.len())
        .into_par_iter()
        .map(|first| {
            let mut acc = vec![0.0; s * s];
            let mut values = vec![0.0; s];
            let mut point = vec![0.0; p];
            point[0] = x[first];
            let inner: Vec<(Vec<f64>, Vec<f64>)> = (1..p).map(|_| (x.clone(), w.clone())).collect();
            let mut visit = |rest: &[f64], weight: f64| {
                point[1..].copy_from_slice(rest);
                for (v, c) in values.iter_mut().zip(components) {
                    *v = c.cdf_unchecked(&point);
                }
                let weight = weight * w[first];
                for i in 0..s {
                    for j in i..s {
                        acc[i * s + j] += weight * values[i] * values[j];
                    }
                }
            };
            if p == 1 {
                visit(&[], 1.0);
            } else {
                for_each_tensor_point(&inner, &mut visit);
            }
            acc
        })
        .collect();
    let mut g = DMatrix::zeros(s, s);
    for part in &partials {
        for i in 0..s {
            for j in i..s {
                g[(i, j)] += part[i * s + j];
            }
        }
    }
    for i in 0..s {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    Ok(g)
}

fn extreme_eigenvalues(g: &DMatrix<f64>) -> (f64, f64, Vec<f64>) {
    let eig = SymmetricEigen::new(g.clone());
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max, values)
}

/// Smallest eigenvalue and numerical rank of the cdf Gram matrix, with a node
/// doubling check. When the smallest eigenvalue sits below the rank tolerance
/// at both resolutions the matrix is singular at both and counts as
/// converged.
pub fn gram_min_eigenvalue(components: &[MldParams], spec: &GramSpec) -> Result<GramReport> {
    let g = gram_matrix(components, spec.nodes_per_axis, spec.bound)?;
    let (min, max, values) = extreme_eigenvalues(&g);
    let rank_tol = RANK_TOL_REL * max;
    let numerical_rank = values.iter().filter(|&&v| v > rank_tol).count();

    let refined = gram_matrix(components, 2 * spec.nodes_per_axis, spec.bound)?;
    let (refined_min, refined_max, _) = extreme_eigenvalues(&refined);
    let both_singular = min <= rank_tol && refined_min <= RANK_TOL_REL * refined_max;
    let converged = both_singular || (refined_min - min).abs() <= spec.convergence_tol * min.abs();

    Ok(GramReport {
        gram: g,
        min_eigenvalue: min,
        max_eigenvalue: max,
        numerical_rank,
        rank_tol,
        nodes_per_axis: spec.nodes_per_axis,
        refined_min_eigenvalue: refined_min,
        converged,
        quadrature: format!(
            "product-logistic weight; logistic substitution; {n}^{p} Gauss-Legendre nodes on [-{b}, {b}]^{p}",
            n = spec.nodes_per_axis,
            p = components[0].p(),
            b = spec.bound
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mu: &[f64], sigma: &[f64]) -> MldParams {
        MldParams::new(mu.to_vec(), sigma.to_vec()).unwrap()
    }

    #[test]
    fn single_component_norm() {
        // ∫ F(x)^2 λ(x) dx = ∫_0^1 u^2 du = 1/3 for the standard component
        let r = gram_min_eigenvalue(&[params(&[0.0], &[1.0])], &GramSpec::default()).unwrap();
        assert!((r.min_eigenvalue - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.numerical_rank, 1);
        assert!(r.converged);
    }

    #[test]
    fn standard_bivariate_norm() {
        // ∫∫ (1/u + 1/v - 1)^-2 du dv over the unit square; 30-digit mpmath
        // nested quadrature gives 0.130395598910641381165509
        let r = gram_min_eigenvalue(&[params(&[0.0, 0.0], &[1.0, 1.0])], &GramSpec::default()).unwrap();
        assert!(r.converged);
        assert!(
            (r.min_eigenvalue - 0.130_395_598_910_641_38).abs() < 1e-9,
            "{}",
            r.min_eigenvalue
        );
    }

    #[test]
    fn duplicated_component_is_singular() {
        let c = params(&[0.3], &[1.4]);
        let r = gram_min_eigenvalue(&[c.clone(), c, params(&[-1.0], &[0.7])], &GramSpec::default()).unwrap();
        assert!(r.min_eigenvalue < 1e-10);
        assert_eq!(r.numerical_rank, 2);
        assert!(r.converged);
    }

    #[test]
    fn distinct_triple_is_nonsingular() {
        let comps = [params(&[-1.0], &[1.0]), params(&[0.0], &[1.0]), params(&[1.0], &[2.0])];
        let r = gram_min_eigenvalue(&comps, &GramSpec::default()).unwrap();
        assert!(r.relative_min_eigenvalue() > 1e-8);
        assert_eq!(r.numerical_rank, 3);
        assert!(r.converged);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.gram[(i, j)] - r.gram[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_high_dimension() {
        let c = params(&[0.0; 4], &[1.0; 4]);
        assert!(matches!(
            gram_min_eigenvalue(&[c], &GramSpec::default()),
            Err(Error::Unsupported(_))
        ));
        assert!(gram_min_eigenvalue(&[], &GramSpec::default()).is_err());
    }
}
