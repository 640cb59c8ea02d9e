//! Probes of univariate linear independence.
//!
//! For `sum_i d_i F_i(x) ≡ 0` with logistic cdfs `F_i`, sending `x -> inf`
//! forces `sum_i d_i = 0`; combined with `1 - F(z) = F(-z)` the same
//! coefficients then annihilate the reflected cdfs. Matching the leading
//! exponential rates of the smallest-scale block yields the Vandermonde
//! system `sum_i d_i exp(j mu_i / sigma_i) = 0`, `j = 1..k`, which only the
//! zero vector solves when the nodes `exp(mu_i / sigma_i)` are distinct.

use nalgebra::DMatrix;
use serde::Serialize;

use super::LinearCombination;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::numeric::logistic;

/// Tolerance on `sum_i d_i` required before reflecting.
pub const REFLECT_SUM_TOL: f64 = 1e-12;

/// Smallest singular value below this fraction of the largest is singular.
pub const VANDERMONDE_SINGULAR_REL: f64 = 1e-12;

fn require_univariate(lc: &LinearCombination) -> Result<()> {
    if lc.p() != 1 {
        return Err(Error::InvalidParameter(format!(
            "univariate probes need p = 1 components, got p = {}",
            lc.p()
        )));
    }
    Ok(())
}

/// `sum_i d_i F_i(x_probe)`; for `x_probe` far beyond every component
/// (at least `40 max sigma + max mu`) this equals `sum_i d_i` to double
/// precision.
pub fn tail_coefficient_sum(lc: &LinearCombination, x_probe: f64) -> Result<f64> {
    require_univariate(lc)?;
    lc.eval(&[x_probe])
}

/// `x -> sum_i d_i [1 + exp((x - mu_i)/sigma_i)]^-1`.
#[derive(Debug, Clone)]
pub struct ReflectedCombination {
    inner: LinearCombination,
}

impl ReflectedCombination {
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite("reflection argument".into()));
        }
        Ok(self
            .inner
            .coeffs()
            .iter()
            .zip(self.inner.components())
            .map(|(d, c)| d * logistic(-(x - c.mu()[0]) / c.sigma()[0]))
            .sum())
    }

    pub fn combination(&self) -> &LinearCombination {
        &self.inner
    }
}

/// The reflected evaluator. Requires `|sum_i d_i| <= 1e-12`, under which it
/// is the pointwise negation of the original combination.
pub fn reflect_combination(lc: &LinearCombination) -> Result<ReflectedCombination> {
    require_univariate(lc)?;
    let total: f64 = lc.coeffs().iter().sum();
    if total.abs() > REFLECT_SUM_TOL {
        return Err(Error::InvalidParameter(format!(
            "coefficients sum to {total:e}; reflection needs a zero sum"
        )));
    }
    Ok(ReflectedCombination { inner: lc.clone() })
}

#[derive(Debug, Clone, Serialize)]
pub struct VandermondeReport {
    /// Row `j` (0 based) holds `exp((j+1) mu_i / sigma_i) * exp(-column_log_scale[i])`.
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
    /// Per-column log factor removed from the matrix (the largest raw log
    /// entry of the column).
    pub column_log_scale: Vec<f64>,
    /// Determinant of the unscaled matrix. May overflow or underflow; see
    /// `log_abs_determinant`.
    pub determinant: f64,
    pub log_abs_determinant: f64,
    /// The determinant is nonzero with the sign of `prod_{i<j} (t_j - t_i)`.
    pub determinant_sign_ok: bool,
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    pub invertible: bool,
    /// Unit null vector of `matrix`, present when singular.
    /// `d_i = v_i exp(-column_log_scale[i])` solves the unscaled system.
    pub null_vector: Option<Vec<f64>>,
    /// Entries span more than 300 decades even after column scaling.
    pub range_exceeded: bool,
}

/// Builds `V[j][i] = exp(j mu_i / sigma_i)` for `j = 1..k` and tests it for
/// invertibility.
pub fn vandermonde_check(mus: &[f64], sigmas: &[f64]) -> Result<VandermondeReport> {
    let k = mus.len();
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one node".into()));
    }
    check_dim(k, sigmas.len())?;
    check_finite(mus, "locations")?;
    check_finite(sigmas, "scales")?;
    if sigmas.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidParameter("scales must be positive".into()));
    }
    let log_nodes: Vec<f64> = mus.iter().zip(sigmas).map(|(m, s)| m / s).collect();
    let log_entry = |j: usize, i: usize| (j as f64 + 1.0) * log_nodes[i];

    // columns are equilibrated by their largest entry, which leaves
    // singularity unchanged and keeps the spread of node sizes out of the
    // singular values
    let column_log_scale: Vec<f64> = (0..k).map(|i| log_entry(0, i).max(log_entry(k - 1, i))).collect();
    let scaled = |j: usize, i: usize| log_entry(j, i) - column_log_scale[i];
    let (lo, hi) = (0..k)
        .flat_map(|i| (0..k).map(move |j| (j, i)))
        .map(|(j, i)| scaled(j, i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let range_exceeded = hi - lo > 300.0 * std::f64::consts::LN_10;

    let matrix = DMatrix::from_fn(k, k, |j, i| scaled(j, i).exp());
    let scaled_determinant = matrix.clone().lu().determinant();
    let log_abs_determinant = scaled_determinant.abs().ln() + column_log_scale.iter().sum::<f64>();
    let determinant = scaled_determinant.signum() * log_abs_determinant.exp();
    let mut expected_sign = 1.0f64;
    for i in 0..k {
        for j in i + 1..k {
            let d = log_nodes[j] - log_nodes[i];
            if d == 0.0 {
                expected_sign = 0.0;
            } else if d < 0.0 {
                expected_sign = -expected_sign;
            }
        }
    }
    let determinant_sign_ok =
        expected_sign != 0.0 && scaled_determinant != 0.0 && scaled_determinant.signum() == expected_sign;

    let svd = matrix.clone().svd(false, true);
    let singular = &svd.singular_values;
    let (mut min_idx, mut min_sv, mut max_sv) = (0, f64::INFINITY, 0.0f64);
    for (idx, &sv) in singular.iter().enumerate() {
        if sv < min_sv {
            min_sv = sv;
            min_idx = idx;
        }
        max_sv = max_sv.max(sv);
    }
    let invertible = min_sv > VANDERMONDE_SINGULAR_REL * max_sv;
    let null_vector = if invertible {
        None
    } else {
        let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
        let mut v: Vec<f64> = (0..k).map(|i| v_t[(min_idx, i)]).collect();
        let sign = v.iter().find(|x| x.abs() > 1e-12).map_or(1.0, |x| x.signum());
        v.iter_mut().for_each(|x| *x *= sign);
        Some(v)
    };

    Ok(VandermondeReport {
        matrix,
        column_log_scale,
        determinant,
        log_abs_determinant,
        determinant_sign_ok,
        min_singular_value: min_sv,
        max_singular_value: max_sv,
        invertible,
        null_vector,
        range_exceeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mld::MldParams;

    fn comps(list: &[(f64, f64)]) -> Vec<MldParams> {
        list.iter()
            .map(|&(m, s)| MldParams::new(vec![m], vec![s]).unwrap())
            .collect()
    }

    #[test]
    fn tail_sum_examples() {
        let same = LinearCombination::new(vec![1.0, -1.0], comps(&[(0.5, 2.0), (0.5, 2.0)])).unwrap();
        assert_eq!(tail_coefficient_sum(&same, 3.0).unwrap(), 0.0);

        let lc = LinearCombination::new(vec![0.3, 0.7], comps(&[(-4.0, 3.0), (9.0, 0.1)])).unwrap();
        assert!((tail_coefficient_sum(&lc, 1e4).unwrap() - 1.0).abs() < 1e-12);

        let lc = LinearCombination::new(vec![2.0, -1.0, -1.0], comps(&[(0.0, 1.0), (1.0, 1.0), (-1.0, 2.0)])).unwrap();
        assert!(tail_coefficient_sum(&lc, 1e4).unwrap().abs() < 1e-12);

        let bivariate =
            LinearCombination::new(vec![1.0], vec![MldParams::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()]).unwrap();
        assert!(tail_coefficient_sum(&bivariate, 1e4).is_err());
    }

    #[test]
    fn reflection_negates_zero_sum_combinations() {
        let lc = LinearCombination::new(vec![1.0, -1.0], comps(&[(0.0, 1.0), (2.0, 0.5)])).unwrap();
        let refl = reflect_combination(&lc).unwrap();
        for i in 0..20 {
            let x = -5.0 + 0.5 * i as f64;
            assert!((refl.eval(x).unwrap() + lc.eval(&[x]).unwrap()).abs() < 1e-12);
        }

        let same = LinearCombination::new(vec![1.0, -1.0], comps(&[(1.0, 1.0), (1.0, 1.0)])).unwrap();
        let refl = reflect_combination(&same).unwrap();
        for x in [-3.0, 0.0, 7.0] {
            assert_eq!(refl.eval(x).unwrap(), 0.0);
        }

        let lc = LinearCombination::new(vec![2.0, -1.0, -1.0], comps(&[(0.0, 1.0), (1.0, 1.0), (-1.0, 2.0)])).unwrap();
        let refl = reflect_combination(&lc).unwrap();
        assert!((refl.eval(0.7).unwrap() + lc.eval(&[0.7]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn reflection_requires_zero_sum() {
        let lc = LinearCombination::new(vec![1.0, -0.5], comps(&[(0.0, 1.0), (2.0, 0.5)])).unwrap();
        assert!(reflect_combination(&lc).is_err());
    }

    #[test]
    fn vandermonde_two_by_two() {
        let r = vandermonde_check(&[0.0, 2f64.ln()], &[1.0, 1.0]).unwrap();
        // raw [[1, 2], [1, 4]] with the second column divided by 4
        let expected = [[1.0, 0.5], [1.0, 1.0]];
        for j in 0..2 {
            for i in 0..2 {
                assert!((r.matrix[(j, i)] - expected[j][i]).abs() < 1e-14);
            }
        }
        assert!((r.determinant - 2.0).abs() < 1e-14);
        assert!((r.log_abs_determinant - 2f64.ln()).abs() < 1e-14);
        assert!(r.determinant_sign_ok && r.invertible);
        assert!(r.null_vector.is_none());
    }

    #[test]
    fn vandermonde_duplicate_nodes() {
        let r = vandermonde_check(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(!r.invertible);
        assert!(!r.determinant_sign_ok);
        let v = r.null_vector.unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - h).abs() < 1e-12 && (v[1] + h).abs() < 1e-12);
    }

    #[test]
    fn vandermonde_single_node() {
        let r = vandermonde_check(&[-3.0], &[0.2]).unwrap();
        assert!(r.invertible && r.determinant_sign_ok);
        assert!((r.determinant - (-15.0f64).exp()).abs() < 1e-20);
    }

    #[test]
    fn vandermonde_scales_overflowing_columns() {
        // exp(3 * 400) overflows; column scaling keeps the test meaningful
        let r = vandermonde_check(&[400.0, 399.0, -2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(r.column_log_scale.iter().any(|&c| c > 0.0));
        assert!(r.matrix.iter().all(|v| v.is_finite()));
        assert!(r.determinant_sign_ok);
        let dup = vandermonde_check(&[400.0, 400.0, -2.0], &[1.0, 1.0, 1.0]).unwrap();
        let v = dup.null_vector.unwrap();
        assert!((v[0] + v[1]).abs() < 1e-9 && v[2].abs() < 1e-9);
    }

    #[test]
    fn vandermonde_flags_extreme_range() {
        let r = vandermonde_check(&[400.0, -400.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(r.range_exceeded);
    }

    #[test]
    fn vandermonde_validation() {
        assert!(vandermonde_check(&[], &[]).is_err());
        assert!(vandermonde_check(&[1.0], &[0.0]).is_err());
        assert!(vandermonde_check(&[1.0, 2.0], &[1.0]).is_err());
    }
}
