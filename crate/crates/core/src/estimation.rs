//! Maximum-likelihood fitting by generalized EM.
//!
//! The E-step computes responsibilities in log space. The M-step sets each
//! weight to its mean responsibility and, per component, climbs the
//! responsibility-weighted mean log density over `(mu, ln sigma)` by gradient
//! ascent with a halving line search. Each accepted step increases the
//! expected complete-data objective, so the observed log-likelihood never
//! decreases.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::mixture::{MixtureModel, MIN_WEIGHT};
use crate::mld::{log1p_sum_exp_neg, MldParams};
use crate::numeric::{ln_factorial, pairwise_sum, LogSumExp};
use crate::rng::{self, streams};

/// Responsibility mass below which a component counts as collapsed.
pub const MIN_COMPONENT_MASS: f64 = 1e-8;

/// Extra initializations tried per restart after a component collapses.
pub const MAX_REINIT_ATTEMPTS: usize = 3;

/// Permitted log-likelihood decrease per EM step (rounding slack).
pub const MONOTONE_SLACK: f64 = 1e-9;

const MAX_HALVINGS: usize = 60;
const ROW_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Number of components.
    pub s: usize,
    pub max_iter: usize,
    /// Stop once the relative log-likelihood improvement of one iteration
    /// falls below this.
    pub rel_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// Gradient steps per component per M-step.
    pub m_step_iters: usize,
    /// M-step stops early once the gradient norm of the weighted mean
    /// objective drops below this.
    pub m_step_tol: f64,
}

impl FitConfig {
    pub fn new(s: usize) -> Self {
        Self {
            s,
            max_iter: 500,
            rel_tol: 1e-8,
            n_restarts: 5,
            seed: 0,
            m_step_iters: 50,
            m_step_tol: 1e-10,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, n_restarts: usize) -> Self {
        self.n_restarts = n_restarts;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Checks `s >= 1`, at least one restart and positive tolerances.
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::InvalidParameter("component count must be >= 1".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidParameter("at least one restart is required".into()));
        }
        if !(self.rel_tol > 0.0 && self.m_step_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    /// Log-likelihood of the initial model followed by one entry per EM
    /// iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// EM iterations performed by the winning restart.
    pub n_iter: usize,
    /// Number of restarts that ran to completion.
    pub best_of: usize,
    /// Index of the winning restart.
    pub best_restart: usize,
    pub seed: u64,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        *self
            .loglik_trace
            .last()
            .expect("trace holds at least the initial value")
    }

    pub fn report(&self) -> FitReport<'_> {
        FitReport {
            loglik_trace: &self.loglik_trace,
            converged: self.converged,
            n_iter: self.n_iter,
            seed: self.seed,
        }
    }
}

/// Fit-report file contents.
#[derive(Debug, Serialize)]
pub struct FitReport<'a> {
    pub loglik_trace: &'a [f64],
    pub converged: bool,
    pub n_iter: usize,
    pub seed: u64,
}

/// Posterior component probabilities for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub probs: Vec<f64>,
    /// Every component density underflowed; `probs` is uniform.
    pub underflow: bool,
}

fn responsibilities_into(x: &[f64], model: &MixtureModel, out: &mut [f64]) -> (f64, bool) {
    let mut acc = LogSumExp::new();
    for (i, (w, c)) in model.weights().iter().zip(model.components()).enumerate() {
        out[i] = w.ln() + c.log_pdf_unchecked(x);
        acc.push(out[i]);
    }
    let total = acc.value();
    if !total.is_finite() {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|r| *r = u);
        return (total, true);
    }
    out.iter_mut().for_each(|r| *r = (*r - total).exp());
    (total, false)
}

/// `r_i ∝ pi_i l_i(x)`, normalized, computed from log densities.
pub fn responsibilities(x: &[f64], model: &MixtureModel) -> Result<Responsibilities> {
    check_dim(model.p(), x.len())?;
    check_finite(x, "point")?;
    let mut probs = vec![0.0; model.s()];
    let (_, underflow) = responsibilities_into(x, model, &mut probs);
    Ok(Responsibilities { probs, underflow })
}

/// Gradient of `ln l(x; mu, sigma)` with respect to `mu` and `ln sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPdfGradient {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

/// With `z_k = (x_k - mu_k)/sigma_k` and
/// `w_k = exp(-z_k) / (1 + sum_j exp(-z_j))`:
/// `d/d mu_k = (1 - (p+1) w_k) / sigma_k` and
/// `d/d ln sigma_k = z_k (1 - (p+1) w_k) - 1`.
pub fn component_log_pdf_grad(x: &[f64], params: &MldParams) -> Result<LogPdfGradient> {
    check_dim(params.p(), x.len())?;
    check_finite(x, "point")?;
    let p = params.p();
    let mut z = vec![0.0; p];
    params.standardize_into(x, &mut z);
    let mut grad = LogPdfGradient {
        mu: vec![0.0; p],
        log_sigma: vec![0.0; p],
    };
    accumulate_grad(&z, params.sigma(), 1.0, &mut grad.mu, &mut grad.log_sigma);
    Ok(grad)
}

/// Adds `weight` times the log-density gradient at standardized point `z`.
/// Returns the log density of `z` without the scale Jacobian term.
#[inline]
fn accumulate_grad(z: &[f64], sigma: &[f64], weight: f64, g_mu: &mut [f64], g_ls: &mut [f64]) -> f64 {
    let p = z.len();
    let lse = log1p_sum_exp_neg(z);
    let coef = p as f64 + 1.0;
    let mut z_sum = 0.0;
    for k in 0..p {
        let w = (-z[k] - lse).exp();
        let a = 1.0 - coef * w;
        g_mu[k] += weight * a / sigma[k];
        g_ls[k] += weight * (z[k] * a - 1.0);
        z_sum += z[k];
    }
    -z_sum - coef * lse
}

/// Adds `weight` times the Hessian of the log density in
/// `(mu, ln sigma)` to the row-major `2p x 2p` matrix `h`. `w` holds the
/// softmax weights `exp(-z_k) / (1 + sum_j exp(-z_j))`.
fn accumulate_hessian(z: &[f64], w: &[f64], sigma: &[f64], weight: f64, h: &mut [f64]) {
    let p = z.len();
    let dim = 2 * p;
    let coef = p as f64 + 1.0;
    for k in 0..p {
        let a = 1.0 - coef * w[k];
        for l in 0..p {
            // second derivative of the log density in standardized coordinates
            let hz = coef * (w[k] * w[l] - if k == l { w[k] } else { 0.0 });
            let diag = if k == l { 1.0 } else { 0.0 };
            h[k * dim + l] += weight * hz / (sigma[k] * sigma[l]);
            let cross = weight * (hz * z[l] - diag * a) / sigma[k];
            h[k * dim + p + l] += cross;
            h[(p + l) * dim + k] += cross;
            h[(p + k) * dim + p + l] += weight * (hz * z[k] * z[l] - diag * a * z[k]);
        }
    }
}

/// Initialization strategies for EM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Locations at per-coordinate data quantiles `(i + 0.5)/s`.
    Quantile,
    /// Locations at `s` distinct randomly chosen rows.
    RandomRows,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(Self::Quantile),
            "random-rows" => Ok(Self::RandomRows),
            other => Err(Error::InvalidParameter(format!("unknown init strategy {other:?}"))),
        }
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn distinct_rows(data: &Dataset) -> usize {
    let mut rows: Vec<&[f64]> = data.rows().collect();
    rows.sort_by(|a, b| a.partial_cmp(b).expect("dataset values are finite"));
    rows.dedup();
    rows.len()
}

/// Starting model: uniform weights, scales at `sd * sqrt(3) / pi` per
/// coordinate (the logistic scale matching the sample standard deviation),
/// and locations chosen by `strategy`.
pub fn init_params(data: &Dataset, s: usize, seed: u64, strategy: InitStrategy) -> Result<MixtureModel> {
    if s == 0 {
        return Err(Error::InvalidParameter("component count must be >= 1".into()));
    }
    if distinct_rows(data) < s {
        return Err(Error::InvalidParameter(format!(
            "data has fewer than {s} distinct rows"
        )));
    }
    let p = data.p();
    let n = data.n() as f64;
    let columns: Vec<Vec<f64>> = (0..p).map(|k| data.column(k)).collect();
    let scale: Vec<f64> = columns
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            // constant columns still need a positive scale
            (var.sqrt() * 3f64.sqrt() / std::f64::consts::PI).max(1e-6)
        })
        .collect();

    let locations: Vec<Vec<f64>> = match strategy {
        InitStrategy::Quantile => {
            let sorted: Vec<Vec<f64>> = columns
                .into_iter()
                .map(|mut c| {
                    c.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                    c
                })
                .collect();
            (0..s)
                .map(|i| {
                    let q = (i as f64 + 0.5) / s as f64;
                    sorted.iter().map(|c| quantile_sorted(c, q)).collect()
                })
                .collect()
        }
        InitStrategy::RandomRows => {
            let mut order: Vec<usize> = (0..data.n()).collect();
            order.shuffle(&mut rng::generator(seed, streams::INIT));
            let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(s);
            for i in order {
                let row = data.row(i);
                if !chosen.iter().any(|c| c.as_slice() == row) {
                    chosen.push(row.to_vec());
                    if chosen.len() == s {
                        break;
                    }
                }
            }
            chosen
        }
    };
    let components = locations
        .into_iter()
        .map(|mu| MldParams::new(mu, scale.clone()))
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(vec![1.0 / s as f64; s], components)
}

/// E-step over the whole dataset: fills `resp` (row-major `n x s`) and
/// returns the log-likelihood.
fn e_step(data: &Dataset, model: &MixtureModel, resp: &mut [f64]) -> f64 {
    let s = model.s();
    let p = data.p();
    let partial: Vec<f64> = data
        .as_flat()
        .par_chunks(ROW_BLOCK * p)
        .zip(resp.par_chunks_mut(ROW_BLOCK * s))
        .map(|(rows, out)| {
            let lls: Vec<f64> = rows
                .chunks_exact(p)
                .zip(out.chunks_exact_mut(s))
                .map(|(x, r)| responsibilities_into(x, model, r).0)
                .collect();
            pairwise_sum(&lls)
        })
        .collect();
    pairwise_sum(&partial)
}

/// Gradient and Hessian of a [`ComponentObjective`] in
/// `(mu_1..mu_p, ln sigma_1..ln sigma_p)` order.
struct Derivatives {
    grad: Vec<f64>,
    /// Row-major `2p x 2p`.
    hess: Vec<f64>,
}

/// Responsibility-weighted mean log density of component `i` at
/// `(mu, ln sigma)`, optionally with first and second derivatives.
struct ComponentObjective<'a> {
    data: &'a Dataset,
    resp: &'a [f64],
    s: usize,
    i: usize,
    mass: f64,
}

impl ComponentObjective<'_> {
    fn eval(&self, mu: &[f64], log_sigma: &[f64], derivs: Option<&mut Derivatives>) -> f64 {
        let p = mu.len();
        let dim = 2 * p;
        let sigma: Vec<f64> = log_sigma.iter().map(|l| l.exp()).collect();
        let log_scale_sum: f64 = log_sigma.iter().sum();
        let want = derivs.is_some();
        let partial: Vec<(f64, Vec<f64>, Vec<f64>)> = self
            .data
            .as_flat()
            .par_chunks(ROW_BLOCK * p)
            .zip(self.resp.par_chunks(ROW_BLOCK * self.s))
            .map(|(rows, resp)| {
                let mut g = vec![0.0; if want { dim } else { 0 }];
                let mut h = vec![0.0; if want { dim * dim } else { 0 }];
                let mut z = vec![0.0; p];
                let mut soft = vec![0.0; p];
                let mut terms = Vec::with_capacity(rows.len() / p);
                for (x, r) in rows.chunks_exact(p).zip(resp.chunks_exact(self.s)) {
                    let w = r[self.i];
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..p {
                        z[k] = (x[k] - mu[k]) / sigma[k];
                    }
                    let core = if want {
                        let (g_mu, g_ls) = g.split_at_mut(p);
                        let core = accumulate_grad(&z, &sigma, w, g_mu, g_ls);
                        let lse = log1p_sum_exp_neg(&z);
                        for k in 0..p {
                            soft[k] = (-z[k] - lse).exp();
                        }
                        accumulate_hessian(&z, &soft, &sigma, w, &mut h);
                        core
                    } else {
                        -z.iter().sum::<f64>() - (p as f64 + 1.0) * log1p_sum_exp_neg(&z)
                    };
                    terms.push(w * core);
                }
                (pairwise_sum(&terms), g, h)
            })
            .collect();
        if let Some(d) = derivs {
            d.grad = vec![0.0; dim];
            d.hess = vec![0.0; dim * dim];
            for (_, g, h) in &partial {
                d.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                d.hess.iter_mut().zip(h).for_each(|(a, b)| *a += b);
            }
            d.grad.iter_mut().for_each(|v| *v /= self.mass);
            d.hess.iter_mut().for_each(|v| *v /= self.mass);
        }
        let total: f64 = partial.iter().map(|(v, _, _)| v).sum();
        total / self.mass - log_scale_sum + ln_factorial(p)
    }
}

/// Ascent direction: the Newton step when the Hessian is negative definite,
/// otherwise the gradient with location entries scaled by `sigma^2`.
fn ascent_direction(d: &Derivatives, log_sigma: &[f64]) -> Vec<f64> {
    let dim = d.grad.len();
    let neg_hess = DMatrix::from_row_slice(dim, dim, &d.hess).map(|v| -v);
    if let Some(chol) = neg_hess.cholesky() {
        let step = chol.solve(&DVector::from_column_slice(&d.grad));
        if step.iter().all(|v| v.is_finite()) && step.dot(&DVector::from_column_slice(&d.grad)) > 0.0 {
            return step.iter().copied().collect();
        }
    }
    let p = dim / 2;
    (0..dim)
        .map(|k| {
            if k < p {
                (2.0 * log_sigma[k]).exp() * d.grad[k]
            } else {
                d.grad[k]
            }
        })
        .collect()
}

/// Line-searched ascent on one component: each step starts at length 1 and
/// is halved until the objective improves. Returns the updated
/// `(mu, ln sigma)`.
fn m_step_component(
    objective: &ComponentObjective<'_>,
    params: &MldParams,
    config: &FitConfig,
) -> (Vec<f64>, Vec<f64>) {
    let p = params.p();
    let mut mu = params.mu().to_vec();
    let mut log_sigma: Vec<f64> = params.sigma().iter().map(|s| s.ln()).collect();
    let mut derivs = Derivatives {
        grad: Vec::new(),
        hess: Vec::new(),
    };
    let mut value = objective.eval(&mu, &log_sigma, Some(&mut derivs));
    let mut trial_mu = vec![0.0; p];
    let mut trial_ls = vec![0.0; p];
    for _ in 0..config.m_step_iters {
        let norm = derivs.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm.is_nan() || norm < config.m_step_tol {
            break;
        }
        let direction = ascent_direction(&derivs, &log_sigma);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for k in 0..p {
                trial_mu[k] = mu[k] + step * direction[k];
                trial_ls[k] = log_sigma[k] + step * direction[p + k];
            }
            let finite = trial_ls.iter().all(|l| l.exp().is_finite() && l.exp() > 0.0);
            if finite && objective.eval(&trial_mu, &trial_ls, None) > value {
                std::mem::swap(&mut mu, &mut trial_mu);
                std::mem::swap(&mut log_sigma, &mut trial_ls);
                value = objective.eval(&mu, &log_sigma, Some(&mut derivs));
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (mu, log_sigma)
}

fn m_step(data: &Dataset, resp: &[f64], model: &MixtureModel, config: &FitConfig) -> Result<MixtureModel> {
    let s = model.s();
    let n = data.n() as f64;
    let mass: Vec<f64> = (0..s)
        .map(|i| pairwise_sum(&resp.iter().skip(i).step_by(s).copied().collect::<Vec<_>>()))
        .collect();
    let mut weights: Vec<f64> = mass.iter().map(|m| (m / n).max(MIN_WEIGHT)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let components = model
        .components()
        .iter()
        .enumerate()
        .map(|(i, params)| {
            let objective = ComponentObjective {
                data,
                resp,
                s,
                i,
                mass: mass[i],
            };
            let (mu, log_sigma) = m_step_component(&objective, params, config);
            MldParams::new(mu, log_sigma.iter().map(|l| l.exp()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(weights, components)
}

fn component_masses(resp: &[f64], s: usize) -> Vec<f64> {
    let mut mass = vec![0.0; s];
    for r in resp.chunks_exact(s) {
        for i in 0..s {
            mass[i] += r[i];
        }
    }
    mass
}

#[derive(Debug)]
struct RestartOutcome {
    model: MixtureModel,
    trace: Vec<f64>,
    converged: bool,
    n_iter: usize,
}

enum RunError {
    Collapsed,
    Failed(Error),
}

fn run_em(data: &Dataset, init: MixtureModel, config: &FitConfig) -> std::result::Result<RestartOutcome, RunError> {
    let s = init.s();
    let mut resp = vec![0.0; data.n() * s];
    let mut model = init;
    let mut ll = e_step(data, &model, &mut resp);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < config.max_iter {
        if component_masses(&resp, s).iter().any(|&m| m < MIN_COMPONENT_MASS) {
            return Err(RunError::Collapsed);
        }
        model = m_step(data, &resp, &model, config).map_err(RunError::Failed)?;
        let next = e_step(data, &model, &mut resp);
        n_iter += 1;
        trace.push(next);
        let improvement = (next - ll) / ll.abs().max(1.0);
        ll = next;
        if improvement < config.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(RestartOutcome {
        model,
        trace,
        converged,
        n_iter,
    })
}

fn run_restart(data: &Dataset, config: &FitConfig, restart: usize) -> Result<Option<RestartOutcome>> {
    for attempt in 0..=MAX_REINIT_ATTEMPTS {
        let (strategy, seed) = if restart == 0 && attempt == 0 {
            (InitStrategy::Quantile, config.seed)
        } else {
            (
                InitStrategy::RandomRows,
                rng::derive_seed(config.seed, &[restart as u64, attempt as u64]),
            )
        };
        let init = init_params(data, config.s, seed, strategy)?;
        match run_em(data, init, config) {
            Ok(outcome) => return Ok(Some(outcome)),
            Err(RunError::Collapsed) => continue,
            Err(RunError::Failed(e)) => return Err(e),
        }
    }
    Ok(None)
}

/// Fits an `s`-component mixture by generalized EM with restarts.
///
/// Restart 0 starts from the quantile initialization, the others from random
/// rows. A restart whose component loses all responsibility mass is
/// re-initialized from fresh random rows, at most
/// [`MAX_REINIT_ATTEMPTS`] times. The restart with the highest final
/// log-likelihood wins; values within `1e-12` go to the lower index.
pub fn em_fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if data.n() < config.s {
        return Err(Error::InvalidParameter(format!(
            "{} rows cannot support {} components",
            data.n(),
            config.s
        )));
    }
    let outcomes = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| run_restart(data, config, r))
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut completed = 0;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let Some(outcome) = outcome else { continue };
        completed += 1;
        let final_ll = *outcome.trace.last().expect("non-empty trace");
        let better = match &best {
            None => true,
            Some((_, b)) => final_ll > b.trace.last().expect("non-empty trace") + 1e-12,
        };
        if better {
            best = Some((r, outcome));
        }
    }
    let (best_restart, outcome) =
        best.ok_or_else(|| Error::Numerical("every restart collapsed a component; try fewer components".into()))?;
    Ok(FitResult {
        model: outcome.model,
        loglik_trace: outcome.trace,
        converged: outcome.converged,
        n_iter: outcome.n_iter,
        best_of: completed,
        best_restart,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{log_likelihood, sample_mixture};
    use crate::mld::{mld_log_pdf, sample};

    fn params(mu: &[f64], sigma: &[f64]) -> MldParams {
        MldParams::new(mu.to_vec(), sigma.to_vec()).unwrap()
    }

    #[test]
    fn responsibilities_examples() {
        let single = MixtureModel::single(params(&[0.0], &[1.0]));
        assert_eq!(responsibilities(&[3.0], &single).unwrap().probs, vec![1.0]);

        let c = params(&[1.0, 2.0], &[1.0, 1.0]);
        let twin = MixtureModel::new(vec![0.5, 0.5], vec![c.clone(), c]).unwrap();
        for x in [[0.0, 0.0], [10.0, -4.0]] {
            let r = responsibilities(&x, &twin).unwrap();
            assert!((r.probs[0] - 0.5).abs() < 1e-15 && (r.probs[1] - 0.5).abs() < 1e-15);
        }

        let far = MixtureModel::new(vec![0.3, 0.7], vec![params(&[-5.0], &[1.0]), params(&[5.0], &[1.0])]).unwrap();
        let r = responsibilities(&[-5.0], &far).unwrap();
        // pi_0 l_0 / pi_1 l_1 = (0.3 * 0.25) / (0.7 * e^-10 / (1 + e^-10)^2)
        let ratio = (0.3 * 0.25) / (0.7 * (-10f64).exp() / (1.0 + (-10f64).exp()).powi(2));
        assert!((r.probs[0] - ratio / (1.0 + ratio)).abs() < 1e-14);
        assert!(r.probs[0] > 0.999);
        assert!(!r.underflow);
    }

    #[test]
    fn responsibilities_underflow_gives_uniform() {
        // standardized residuals overflow to infinity in both components
        let m = MixtureModel::new(
            vec![0.5, 0.5],
            vec![params(&[0.0], &[1e-300]), params(&[1.0], &[1e-300])],
        )
        .unwrap();
        let r = responsibilities(&[1e10], &m).unwrap();
        assert!(r.underflow);
        assert_eq!(r.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn gradient_at_the_standard_mode() {
        let g = component_log_pdf_grad(&[0.0], &params(&[0.0], &[1.0])).unwrap();
        assert_eq!(g.mu, vec![0.0]);
        assert_eq!(g.log_sigma, vec![-1.0]);
        // central difference in ln sigma at h = 1e-6
        let h = 1e-6;
        let f = |ls: f64| mld_log_pdf(&[0.0], &params(&[0.0], &[ls.exp()])).unwrap();
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert!((fd - g.log_sigma[0]).abs() < 1e-6);
    }

    #[test]
    fn init_quantile_uses_medians_for_one_component() {
        let ds = Dataset::from_rows(&[[1.0, 10.0], [3.0, 0.0], [2.0, 5.0], [4.0, 7.0]]).unwrap();
        let m = init_params(&ds, 1, 0, InitStrategy::Quantile).unwrap();
        assert_eq!(m.components()[0].mu(), &[2.5, 6.0]);
    }

    #[test]
    fn init_scale_rule_recovers_unit_scale() {
        let ds = sample(&params(&[0.0], &[1.0]), 100_000, 5).unwrap();
        let m = init_params(&ds, 1, 0, InitStrategy::Quantile).unwrap();
        assert!((m.components()[0].sigma()[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn init_random_rows_is_seeded_and_distinct() {
        let ds = sample(&params(&[0.0, 1.0], &[1.0, 2.0]), 200, 1).unwrap();
        let a = init_params(&ds, 4, 11, InitStrategy::RandomRows).unwrap();
        let b = init_params(&ds, 4, 11, InitStrategy::RandomRows).unwrap();
        assert_eq!(a, b);
        for (i, c) in a.components().iter().enumerate() {
            assert!(ds.rows().any(|r| r == c.mu()));
            for d in &a.components()[..i] {
                assert_ne!(c.mu(), d.mu());
            }
        }
        assert!("kmeans".parse::<InitStrategy>().is_err());
        assert_eq!("random-rows".parse::<InitStrategy>().unwrap(), InitStrategy::RandomRows);
    }

    #[test]
    fn init_requires_distinct_rows() {
        let ds = Dataset::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert!(init_params(&ds, 2, 0, InitStrategy::Quantile).is_err());
        assert!(init_params(&ds, 2, 0, InitStrategy::RandomRows).is_err());
        assert!(init_params(&ds, 1, 0, InitStrategy::RandomRows).is_ok());
    }

    #[test]
    fn fit_rejects_too_few_rows() {
        let ds = Dataset::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(em_fit(&ds, &FitConfig::new(3)).is_err());
        assert!(em_fit(&ds, &FitConfig::new(0)).is_err());
    }

    #[test]
    fn objective_hessian_matches_gradient_differences() {
        let truth = MixtureModel::new(
            vec![0.5, 0.5],
            vec![
                params(&[-1.0, 0.5, 0.0], &[1.0, 0.5, 2.0]),
                params(&[1.0, 1.0, -1.0], &[0.7, 1.5, 1.0]),
            ],
        )
        .unwrap();
        let (ds, _) = sample_mixture(&truth, 500, 11).unwrap();
        let mut resp = vec![0.0; ds.n() * 2];
        e_step(&ds, &truth, &mut resp);
        let mass = (0..ds.n()).map(|r| resp[2 * r]).sum();
        let obj = ComponentObjective {
            data: &ds,
            resp: &resp,
            s: 2,
            i: 0,
            mass,
        };
        let mu = [-0.8, 0.3, 0.2];
        let ls = [0.1, -0.5, 0.6];
        let mut d = Derivatives {
            grad: Vec::new(),
            hess: Vec::new(),
        };
        obj.eval(&mu, &ls, Some(&mut d));
        let h = 1e-6;
        for col in 0..6 {
            let shifted = |delta: f64| {
                let (mut m, mut l) = (mu, ls);
                if col < 3 {
                    m[col] += delta;
                } else {
                    l[col - 3] += delta;
                }
                let mut out = Derivatives {
                    grad: Vec::new(),
                    hess: Vec::new(),
                };
                obj.eval(&m, &l, Some(&mut out));
                out.grad
            };
            let (up, dn) = (shifted(h), shifted(-h));
            for row in 0..6 {
                let fd = (up[row] - dn[row]) / (2.0 * h);
                let exact = d.hess[row * 6 + col];
                assert!(
                    (fd - exact).abs() < 1e-6 * exact.abs().max(1.0),
                    "({row},{col}): {fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn single_component_fit_solves_score_equations() {
        let truth = params(&[1.5, -0.5], &[2.0, 0.7]);
        let ds = sample(&truth, 2000, 8).unwrap();
        let fit = em_fit(&ds, &FitConfig::new(1).with_restarts(1)).unwrap();
        assert!(fit.converged);
        let c = &fit.model.components()[0];
        let mut g = [0.0; 4];
        for row in ds.rows() {
            let gr = component_log_pdf_grad(row, c).unwrap();
            for k in 0..2 {
                g[k] += gr.mu[k];
                g[2 + k] += gr.log_sigma[k];
            }
        }
        let norm = g.iter().map(|v| (v / ds.n() as f64).powi(2)).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "mean score norm {norm}");
    }

    #[test]
    fn fit_is_monotone_and_deterministic() {
        let truth = MixtureModel::new(
            vec![0.4, 0.6],
            vec![params(&[-1.0, 0.0], &[1.0, 0.5]), params(&[2.0, 1.0], &[0.5, 1.0])],
        )
        .unwrap();
        let (ds, _) = sample_mixture(&truth, 1500, 3).unwrap();
        let config = FitConfig::new(2).with_restarts(2).with_seed(17);
        let a = em_fit(&ds, &config).unwrap();
        for w in a.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - MONOTONE_SLACK);
        }
        let b = em_fit(&ds, &config).unwrap();
        assert_eq!(a.loglik_trace, b.loglik_trace);
        assert_eq!(a.model, b.model);
        assert!((log_likelihood(&ds, &a.model).unwrap() - a.final_loglik()).abs() < 1e-9);
        assert_eq!(a.best_of, 2);
    }
}
