//! Merging two coordinates of a shared-scale mixture into one.
//!
//! Along the line `x_a = sigma_a x - y_a`, `x_b = sigma_b x - y_b` the two
//! exponentials of component `i` combine into `exp(-x) m_i` with
//! `m_i = exp((y_a + mu_i^a)/sigma_a) + exp((y_b + mu_i^b)/sigma_b)`, i.e. a
//! single logistic coordinate with location `ln m_i` and unit scale. If the
//! offsets keep the `m_i` of components with different `(mu^a, mu^b)`
//! distinct, distinct components stay distinct after the merge.

use crate::error::{Error, Result};
use crate::mixture::MixtureModel;
use crate::mld::MldParams;
use crate::numeric::log_add_exp;
use crate::rng::{self, streams};

/// Random offsets tried after `(0, 0)`.
pub const OFFSET_TRIALS: usize = 1000;
/// Offsets are drawn uniformly from `[-OFFSET_RANGE, OFFSET_RANGE]^2`.
pub const OFFSET_RANGE: f64 = 5.0;
/// Merged values closer than this fraction of the largest collide.
pub const MERGE_GAP_REL: f64 = 1e-9;

fn check_pair(p: usize, (a, b): (usize, usize)) -> Result<()> {
    if p < 2 {
        return Err(Error::InvalidParameter("collapsing needs p >= 2".into()));
    }
    if a == b || a >= p || b >= p {
        return Err(Error::InvalidParameter(format!(
            "coordinate pair ({a}, {b}) invalid for p = {p}"
        )));
    }
    Ok(())
}

fn check_shared_scale(components: &[MldParams]) -> Result<()> {
    let first = components
        .first()
        .ok_or_else(|| Error::InvalidParameter("need at least one component".into()))?
        .sigma();
    if components.iter().any(|c| c.sigma() != first || c.p() != first.len()) {
        return Err(Error::InvalidParameter(
            "components must share a single scale vector".into(),
        ));
    }
    Ok(())
}

/// `ln m_i` for one component.
fn merged_log_location(c: &MldParams, (a, b): (usize, usize), y_a: f64, y_b: f64) -> f64 {
    log_add_exp((y_a + c.mu()[a]) / c.sigma()[a], (y_b + c.mu()[b]) / c.sigma()[b])
}

/// First pair `(i, j)` with different `(mu^a, mu^b)` whose merged values
/// collide at these offsets.
fn collision(components: &[MldParams], pair: (usize, usize), y_a: f64, y_b: f64) -> Option<(usize, usize)> {
    let logs: Vec<f64> = components
        .iter()
        .map(|c| merged_log_location(c, pair, y_a, y_b))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = pair;
    for i in 0..components.len() {
        for j in i + 1..components.len() {
            let (ci, cj) = (&components[i], &components[j]);
            if ci.mu()[a] == cj.mu()[a] && ci.mu()[b] == cj.mu()[b] {
                continue;
            }
            if ((logs[i] - top).exp() - (logs[j] - top).exp()).abs() <= MERGE_GAP_REL {
                return Some((i, j));
            }
        }
    }
    None
}

/// Offsets `(y_a, y_b)` that keep merged locations distinct for all
/// component pairs differing in `(mu^a, mu^b)`. Tries `(0, 0)` first, then up
/// to [`OFFSET_TRIALS`] uniform draws.
pub fn find_separating_offsets(components: &[MldParams], pair: (usize, usize), seed: u64) -> Result<(f64, f64)> {
    check_shared_scale(components)?;
    check_pair(components[0].p(), pair)?;
    let mut last = match collision(components, pair, 0.0, 0.0) {
        None => return Ok((0.0, 0.0)),
        Some(c) => c,
    };
    let mut rng = rng::generator(seed, streams::OFFSETS);
    for _ in 0..OFFSET_TRIALS {
        let y_a = OFFSET_RANGE * (2.0 * rng::open_uniform(&mut rng) - 1.0);
        let y_b = OFFSET_RANGE * (2.0 * rng::open_uniform(&mut rng) - 1.0);
        match collision(components, pair, y_a, y_b) {
            None => return Ok((y_a, y_b)),
            Some(c) => last = c,
        }
    }
    Err(Error::Numerical(format!(
        "no separating offsets after {OFFSET_TRIALS} trials; components {} and {} keep colliding",
        last.0, last.1
    )))
}

/// Replaces coordinates `a` and `b` of a shared-scale mixture by one merged
/// coordinate placed first, followed by the remaining coordinates in their
/// original order. The merged coordinate has unit scale and location
/// `ln m_i`; weights are unchanged.
///
/// For every `x` and remaining point `rest`, the original cdf at
/// `x_a = sigma_a x - y_a`, `x_b = sigma_b x - y_b`, `rest` equals the
/// collapsed cdf at `(x, rest)`.
pub fn collapse_pair(model: &MixtureModel, pair: (usize, usize), y_a: f64, y_b: f64) -> Result<MixtureModel> {
    check_shared_scale(model.components())?;
    check_pair(model.p(), pair)?;
    if !(y_a.is_finite() && y_b.is_finite()) {
        return Err(Error::NonFinite("offsets".into()));
    }
    let (a, b) = pair;
    let components = model
        .components()
        .iter()
        .map(|c| {
            let mut mu = vec![merged_log_location(c, pair, y_a, y_b)];
            let mut sigma = vec![1.0];
            for k in (0..c.p()).filter(|&k| k != a && k != b) {
                mu.push(c.mu()[k]);
                sigma.push(c.sigma()[k]);
            }
            MldParams::new(mu, sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(model.weights().to_vec(), components)
}

/// Point in the original coordinates corresponding to `(x, rest)` in the
/// collapsed model.
pub fn expand_point(scale: &[f64], (a, b): (usize, usize), y_a: f64, y_b: f64, x: f64, rest: &[f64]) -> Vec<f64> {
    let p = scale.len();
    let mut out = vec![0.0; p];
    let mut rest_iter = rest.iter();
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = if k == a {
            scale[a] * x - y_a
        } else if k == b {
            scale[b] * x - y_b
        } else {
            *rest_iter.next().expect("rest has p - 2 coordinates")
        };
    }
    out
}
