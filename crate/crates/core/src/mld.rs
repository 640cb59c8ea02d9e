//! The multivariate logistic distribution with per-coordinate location and
//! scale.
//!
//! In standardized coordinates `z_k = (x_k - mu_k) / sigma_k` the joint cdf is
//! `1 / (1 + sum_k exp(-z_k))` and the density is
//! `p! exp(-sum_k z_k) (1 + sum_k exp(-z_k))^-(p+1)`. Everything is evaluated
//! through `ln(1 + sum_k exp(-z_k))`, stabilized by the largest of
//! `{0, -z_1, .., -z_p}`, so residuals of several hundred scale units neither
//! overflow nor lose the tail.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::numeric::{ln_factorial, log_add_exp};
use crate::rng::{self, streams, WORDS_PER_UNIFORM};

/// Location and scale of one multivariate logistic component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MldParams {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl MldParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        check_dim(mu.len(), sigma.len())?;
        check_finite(&mu, "location vector")?;
        check_finite(&sigma, "scale vector")?;
        if let Some(k) = sigma.iter().position(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale must be strictly positive, coordinate {k} has {}",
                sigma[k]
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Zero location, unit scale.
    pub fn standard(p: usize) -> Result<Self> {
        Self::new(vec![0.0; p], vec![1.0; p])
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `sum_k ln sigma_k`, the log Jacobian of standardization.
    pub fn log_scale_sum(&self) -> f64 {
        self.sigma.iter().map(|s| s.ln()).sum()
    }

    pub(crate) fn standardize_into(&self, x: &[f64], z: &mut [f64]) {
        for k in 0..z.len() {
            z[k] = (x[k] - self.mu[k]) / self.sigma[k];
        }
    }

    fn validate_point(&self, x: &[f64]) -> Result<()> {
        check_dim(self.p(), x.len())?;
        check_finite(x, "point")
    }

    /// Log density without input validation; `x` must have length `p`.
    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        let p = self.p();
        let mut acc = LogCdfAccumulator::new();
        let mut z_sum = 0.0;
        for k in 0..p {
            let z = (x[k] - self.mu[k]) / self.sigma[k];
            z_sum += z;
            acc.push(z);
        }
        let v = ln_factorial(p) - z_sum - (p as f64 + 1.0) * acc.finish() - self.log_scale_sum();
        // inf - inf when a residual overflows to -inf; the density is 0 there
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    pub(crate) fn cdf_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = LogCdfAccumulator::new();
        for k in 0..self.p() {
            acc.push((x[k] - self.mu[k]) / self.sigma[k]);
        }
        (-acc.finish()).exp().clamp(0.0, 1.0)
    }
}

/// Accumulates `ln(1 + sum_k exp(-z_k))` in one pass using a running maximum
/// of the exponents `{0, -z_1, ..}`.
#[derive(Debug, Clone, Copy)]
struct LogCdfAccumulator {
    max: f64,
    scaled_sum: f64,
}

impl LogCdfAccumulator {
    fn new() -> Self {
        // the leading 1 = exp(0)
        Self {
            max: 0.0,
            scaled_sum: 1.0,
        }
    }

    #[inline]
    fn push(&mut self, z: f64) {
        let e = -z;
        if e <= self.max {
            self.scaled_sum += (e - self.max).exp();
        } else {
            self.scaled_sum = self.scaled_sum * (self.max - e).exp() + 1.0;
            self.max = e;
        }
    }

    #[inline]
    fn finish(self) -> f64 {
        self.max + self.scaled_sum.ln()
    }
}

/// `ln(1 + sum_k exp(-z_k))`, the negated log of the standard cdf.
pub fn log1p_sum_exp_neg(z: &[f64]) -> f64 {
    let mut acc = LogCdfAccumulator::new();
    for &zk in z {
        acc.push(zk);
    }
    acc.finish()
}

fn validate_standard_point(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("point must have dimension >= 1".into()));
    }
    check_finite(x, "point")
}

/// Standard joint cdf `1 / (1 + sum_k exp(-x_k))`.
pub fn standard_cdf(x: &[f64]) -> Result<f64> {
    validate_standard_point(x)?;
    Ok((-log1p_sum_exp_neg(x)).exp().clamp(0.0, 1.0))
}

/// Log of the standard density.
pub fn standard_log_pdf(x: &[f64]) -> Result<f64> {
    validate_standard_point(x)?;
    let p = x.len();
    let sum: f64 = x.iter().sum();
    Ok(ln_factorial(p) - sum - (p as f64 + 1.0) * log1p_sum_exp_neg(x))
}

/// Standard density `p! exp(-sum x_k) (1 + sum exp(-x_k))^-(p+1)`.
pub fn standard_pdf(x: &[f64]) -> Result<f64> {
    standard_log_pdf(x).map(f64::exp)
}

/// Joint cdf with location and scale.
pub fn mld_cdf(x: &[f64], params: &MldParams) -> Result<f64> {
    params.validate_point(x)?;
    Ok(params.cdf_unchecked(x))
}

/// Log density with location and scale.
pub fn mld_log_pdf(x: &[f64], params: &MldParams) -> Result<f64> {
    params.validate_point(x)?;
    Ok(params.log_pdf_unchecked(x))
}

pub fn mld_pdf(x: &[f64], params: &MldParams) -> Result<f64> {
    mld_log_pdf(x, params).map(f64::exp)
}

/// Univariate logistic cdf of coordinate `k` (zero based): the joint cdf with
/// every other coordinate sent to `+inf`.
pub fn marginal_cdf(xk: f64, params: &MldParams, k: usize) -> Result<f64> {
    if k >= params.p() {
        return Err(Error::InvalidParameter(format!(
            "coordinate index {k} out of range for dimension {}",
            params.p()
        )));
    }
    if !xk.is_finite() {
        return Err(Error::NonFinite("marginal argument".into()));
    }
    let z = (xk - params.mu[k]) / params.sigma[k];
    Ok(crate::numeric::logistic(z))
}

/// Inverts the conditional cdf of the next standardized coordinate.
///
/// Given the first `j` standardized coordinates with
/// `s_accum = 1 + sum_{k<=j} exp(-z_k)`, the next coordinate satisfies
/// `P(exp(-Z) >= b | prefix) = (s_accum / (s_accum + b))^(j+1)`. Returns the
/// `b = exp(-z)` at which that conditional cdf equals `u`:
/// `b = s_accum (u^(-1/(j+1)) - 1)`.
pub fn conditional_quantile(u: f64, s_accum: f64, j: usize) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidParameter(format!("u must lie in (0, 1), got {u}")));
    }
    if !(s_accum.is_finite() && s_accum > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "accumulated sum must be finite and positive, got {s_accum}"
        )));
    }
    Ok(s_accum * (-u.ln() / (j as f64 + 1.0)).exp_m1())
}

/// Fills `z` with one standardized draw by sequential conditional inversion,
/// consuming exactly `z.len()` uniforms from `rng`. Works in log space:
/// `ln b = ln s + ln(expm1(-ln u / (j+1)))`.
pub(crate) fn draw_standardized<R: rand::Rng + ?Sized>(rng: &mut R, z: &mut [f64]) {
    let mut log_s = 0.0;
    for (j, zj) in z.iter_mut().enumerate() {
        let u = rng::open_uniform(rng);
        let log_b = log_s + (-u.ln() / (j as f64 + 1.0)).exp_m1().ln();
        *zj = -log_b;
        log_s = log_add_exp(log_s, log_b);
    }
}

/// Rows per independently positioned generator in parallel sampling.
pub(crate) const SAMPLE_CHUNK_ROWS: usize = 4096;

/// Exact draws from the distribution, `n` rows, reproducible from `seed`.
///
/// Row `i` reads keystream words `[2pi, 2p(i+1))`, so the output is identical
/// regardless of the number of worker threads.
pub fn sample(params: &MldParams, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    let p = params.p();
    let mut values = vec![0.0; n * p];
    values
        .par_chunks_mut(SAMPLE_CHUNK_ROWS * p)
        .enumerate()
        .for_each(|(chunk, out)| {
            let first_row = (chunk * SAMPLE_CHUNK_ROWS) as u128;
            let mut rng = rng::generator_at(seed, streams::MLD_SAMPLE, first_row * p as u128 * WORDS_PER_UNIFORM);
            for row in out.chunks_exact_mut(p) {
                draw_standardized(&mut rng, row);
                for k in 0..p {
                    row[k] = params.mu[k] + params.sigma[k] * row[k];
                }
            }
        });
    Dataset::from_flat(values, p)
}
