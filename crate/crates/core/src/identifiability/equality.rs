//! Comparing two mixtures as distributions and as parameter sets.

use rayon::prelude::*;
use serde::Serialize;

use super::component_distance;
use crate::error::{check_dim, Result};
use crate::mixture::MixtureModel;
use crate::quadrature::for_each_tensor_point;

/// Default threshold below which two mixtures count as equal.
pub const DEFAULT_DIST_TOL: f64 = 1e-9;
/// Default threshold for matching parameters.
pub const DEFAULT_PARAM_TOL: f64 = 1e-6;
/// Gaps above this are reported as clearly distinct.
pub const DISTINCT_GAP: f64 = 1e-3;

/// Evaluation grid: `points_per_axis` equally spaced values on each axis,
/// spanning `±span` pooled standardized units around the pooled center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points_per_axis: usize,
    pub span: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_axis: 41,
            span: 10.0,
        }
    }
}

impl GridSpec {
    /// Per-axis grid values. The center of axis `k` is the mean of `mu^k`
    /// over every component of every model, the unit is the mean `sigma^k`.
    pub fn axes(&self, models: &[&MixtureModel]) -> Vec<Vec<f64>> {
        let p = models[0].p();
        let count = models.iter().map(|m| m.s()).sum::<usize>() as f64;
        (0..p)
            .map(|k| {
                let comps = models.iter().flat_map(|m| m.components());
                let center = comps.clone().map(|c| c.mu()[k]).sum::<f64>() / count;
                let unit = comps.map(|c| c.sigma()[k]).sum::<f64>() / count;
                let n = self.points_per_axis.max(1);
                (0..n)
                    .map(|i| {
                        let t = if n == 1 {
                            0.0
                        } else {
                            -1.0 + 2.0 * i as f64 / (n - 1) as f64
                        };
                        center + self.span * unit * t
                    })
                    .collect()
            })
            .collect()
    }
}

/// Largest `|F_1 - F_2|` over the tensor grid built from `axes`.
pub fn sup_norm_cdf_gap(m1: &MixtureModel, m2: &MixtureModel, axes: &[Vec<f64>]) -> f64 {
    let p = axes.len();
    let first = &axes[0];
    let rest: Vec<(Vec<f64>, Vec<f64>)> = axes[1..].iter().map(|a| (a.clone(), vec![1.0; a.len()])).collect();
    first
        .par_iter()
        .map(|&x0| {
            let mut point = vec![0.0; p];
            point[0] = x0;
            let mut gap = 0.0f64;
            let mut visit = |tail: &[f64], _: f64| {
                point[1..].copy_from_slice(tail);
                gap = gap.max((m1.cdf_unchecked(&point) - m2.cdf_unchecked(&point)).abs());
            };
            if p == 1 {
                visit(&[], 1.0);
            } else {
                for_each_tensor_point(&rest, &mut visit);
            }
            gap
        })
        .reduce(|| 0.0, f64::max)
}

/// Distance between two components including their weights.
fn weighted_distance(m1: &MixtureModel, i: usize, m2: &MixtureModel, j: usize) -> f64 {
    component_distance(&m1.components()[i], &m2.components()[j]).max((m1.weights()[i] - m2.weights()[j]).abs())
}

/// Kuhn's augmenting-path matching restricted to edges with cost `<= limit`.
fn perfect_matching(cost: &[Vec<f64>], limit: f64) -> Option<Vec<usize>> {
    let s = cost.len();
    let mut owner: Vec<Option<usize>> = vec![None; s];
    fn augment(i: usize, cost: &[Vec<f64>], limit: f64, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for j in 0..cost.len() {
            if cost[i][j] <= limit && !seen[j] {
                seen[j] = true;
                if owner[j].is_none_or(|k| augment(k, cost, limit, seen, owner)) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    for i in 0..s {
        let mut seen = vec![false; s];
        if !augment(i, cost, limit, &mut seen, &mut owner) {
            return None;
        }
    }
    let mut perm = vec![0; s];
    for (j, i) in owner.iter().enumerate() {
        perm[i.expect("perfect matching")] = j;
    }
    Some(perm)
}

/// Assignment minimizing the largest matched distance. Returns `perm` with
/// component `i` of `m1` matched to component `perm[i]` of `m2`, plus that
/// largest distance. `None` when the component counts differ.
pub fn match_components(m1: &MixtureModel, m2: &MixtureModel) -> Option<(Vec<usize>, f64)> {
    if m1.s() != m2.s() || m1.p() != m2.p() {
        return None;
    }
    let s = m1.s();
    let cost: Vec<Vec<f64>> = (0..s)
        .map(|i| (0..s).map(|j| weighted_distance(m1, i, m2, j)).collect())
        .collect();
    let mut levels: Vec<f64> = cost.iter().flatten().copied().collect();
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    levels.dedup();
    let (mut lo, mut hi) = (0, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if perfect_matching(&cost, levels[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let perm = perfect_matching(&cost, levels[lo]).expect("the largest level admits every edge");
    Some((perm, levels[lo]))
}

/// Bottleneck parameter distance between two mixtures; infinite when the
/// component counts differ.
pub fn parameter_distance(m1: &MixtureModel, m2: &MixtureModel) -> f64 {
    match_components(m1, m2).map_or(f64::INFINITY, |(_, d)| d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Equal,
    Distinct,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct EqualityReport {
    pub sup_norm_cdf_gap: f64,
    pub equal_distribution: bool,
    /// Best component matching (`m1[i]` to `m2[permutation[i]]`), when the
    /// component counts agree.
    #[serde(rename = "permutation")]
    pub matched_permutation: Option<Vec<usize>>,
    pub max_param_gap: f64,
    pub equal_parameters: bool,
    pub verdict: Verdict,
    pub grid_points_per_axis: usize,
}

/// Grid sup-norm comparison of cdfs plus parameter matching.
pub fn mixture_equality_test(
    m1: &MixtureModel,
    m2: &MixtureModel,
    grid: &GridSpec,
    dist_tol: f64,
    param_tol: f64,
) -> Result<EqualityReport> {
    check_dim(m1.p(), m2.p())?;
    let axes = grid.axes(&[m1, m2]);
    let gap = sup_norm_cdf_gap(m1, m2, &axes);
    let matched = match_components(m1, m2);
    let max_param_gap = matched.as_ref().map_or(f64::INFINITY, |(_, d)| *d);
    let equal_parameters = max_param_gap < param_tol;
    let verdict = if gap < dist_tol {
        Verdict::Equal
    } else if gap > DISTINCT_GAP {
        Verdict::Distinct
    } else {
        Verdict::Inconclusive
    };
    Ok(EqualityReport {
        sup_norm_cdf_gap: gap,
        equal_distribution: gap < dist_tol,
        matched_permutation: matched.map(|(perm, _)| perm),
        max_param_gap,
        equal_parameters,
        verdict,
        grid_points_per_axis: grid.points_per_axis,
    })
}
