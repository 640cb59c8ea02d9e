//! Finite mixtures of multivariate logistic components.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::mld::{self, MldParams, SAMPLE_CHUNK_ROWS};
use crate::numeric::{pairwise_sum, LogSumExp};
use crate::rng::{self, streams, WORDS_PER_UNIFORM};

/// Smallest admissible mixing weight.
pub const MIN_WEIGHT: f64 = 1e-12;

/// Weights within this distance of the simplex are renormalized; anything
/// further is rejected.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub const MODEL_FORMAT: &str = "logimix-model-v1";

/// Weights on the simplex plus `s` components of a common dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<MldParams>,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, components: Vec<MldParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("a mixture needs at least one component".into()));
        }
        check_dim(components.len(), weights.len())?;
        let p = components[0].p();
        for c in &components {
            check_dim(p, c.p())?;
        }
        check_finite(&weights, "mixing weights")?;
        if let Some(w) = weights.iter().find(|&&w| !(MIN_WEIGHT..=1.0).contains(&w)) {
            return Err(Error::InvalidParameter(format!(
                "mixing weight {w} outside [{MIN_WEIGHT:e}, 1]"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("mixing weights sum to {total}, not 1")));
        }
        // renormalize only outside the simplex tolerance so that saved models
        // reload bit-for-bit
        let weights = if (total - 1.0).abs() > 1e-12 {
            weights.into_iter().map(|w| w / total).collect()
        } else {
            weights
        };
        Ok(Self { weights, components })
    }

    /// A one-component model.
    pub fn single(component: MldParams) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    /// Number of components.
    pub fn s(&self) -> usize {
        self.components.len()
    }

    /// Dimension of the observations.
    pub fn p(&self) -> usize {
        self.components[0].p()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[MldParams] {
        &self.components
    }

    /// Copy with components (and their weights) reordered so that component
    /// `i` of the result is component `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let s = self.s();
        let mut seen = vec![false; s];
        if perm.len() != s || perm.iter().any(|&i| i >= s || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidParameter(format!(
                "{perm:?} is not a permutation of 0..{s}"
            )));
        }
        Ok(Self {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            components: perm.iter().map(|&i| self.components[i].clone()).collect(),
        })
    }

    /// True when every component has the same scale vector.
    pub fn has_shared_scale(&self) -> bool {
        let first = self.components[0].sigma();
        self.components.iter().all(|c| c.sigma() == first)
    }

    pub(crate) fn cdf_unchecked(&self, x: &[f64]) -> f64 {
        let v: f64 = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.cdf_unchecked(x))
            .sum();
        v.clamp(0.0, 1.0)
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = LogSumExp::new();
        for (w, c) in self.weights.iter().zip(&self.components) {
            acc.push(w.ln() + c.log_pdf_unchecked(x));
        }
        acc.value()
    }

    fn validate_point(&self, x: &[f64]) -> Result<()> {
        check_dim(self.p(), x.len())?;
        check_finite(x, "point")
    }
}

/// `sum_i pi_i L(x; mu_i, sigma_i)`.
pub fn mixture_cdf(x: &[f64], model: &MixtureModel) -> Result<f64> {
    model.validate_point(x)?;
    Ok(model.cdf_unchecked(x))
}

/// Mixture log density via log-sum-exp over `ln pi_i + ln l_i(x)`.
pub fn mixture_log_pdf(x: &[f64], model: &MixtureModel) -> Result<f64> {
    model.validate_point(x)?;
    Ok(model.log_pdf_unchecked(x))
}

pub fn mixture_pdf(x: &[f64], model: &MixtureModel) -> Result<f64> {
    mixture_log_pdf(x, model).map(f64::exp)
}

/// Per-row mixture log densities, in row order.
pub fn row_log_densities(data: &Dataset, model: &MixtureModel) -> Result<Vec<f64>> {
    check_dim(model.p(), data.p())?;
    Ok(data
        .as_flat()
        .par_chunks(data.p())
        .map(|row| model.log_pdf_unchecked(row))
        .collect())
}

/// Total log-likelihood. Rows are evaluated in parallel and reduced by
/// fixed-order pairwise summation, so the value does not depend on the thread
/// count.
pub fn log_likelihood(data: &Dataset, model: &MixtureModel) -> Result<f64> {
    Ok(pairwise_sum(&row_log_densities(data, model)?))
}

/// Index of the component selected by uniform `u` under `weights`.
fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draws `n` labelled rows: a component index from the weights, then an exact
/// draw from that component. Row `i` consumes `p + 1` uniforms at a fixed
/// keystream offset, so output is independent of thread count.
pub fn sample_mixture(model: &MixtureModel, n: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    let p = model.p();
    let words_per_row = (p as u128 + 1) * WORDS_PER_UNIFORM;
    let mut values = vec![0.0; n * p];
    let mut labels = vec![0usize; n];
    values
        .par_chunks_mut(SAMPLE_CHUNK_ROWS * p)
        .zip(labels.par_chunks_mut(SAMPLE_CHUNK_ROWS))
        .enumerate()
        .for_each(|(chunk, (out, labs))| {
            let first_row = (chunk * SAMPLE_CHUNK_ROWS) as u128;
            let mut rng = rng::generator_at(seed, streams::MIXTURE_SAMPLE, first_row * words_per_row);
            for (row, label) in out.chunks_exact_mut(p).zip(labs.iter_mut()) {
                let i = pick_component(&model.weights, rng::open_uniform(&mut rng));
                *label = i;
                mld::draw_standardized(&mut rng, row);
                let c = &model.components[i];
                for k in 0..p {
                    row[k] = c.mu()[k] + c.sigma()[k] * row[k];
                }
            }
        });
    Ok((Dataset::from_flat(values, p)?, labels))
}

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    p: usize,
    s: usize,
    weights: Vec<f64>,
    components: Vec<ComponentRecord>,
}

impl Serialize for MixtureModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ModelRecord {
            format: MODEL_FORMAT.to_string(),
            p: self.p(),
            s: self.s(),
            weights: self.weights.clone(),
            components: self
                .components
                .iter()
                .map(|c| ComponentRecord {
                    mu: c.mu().to_vec(),
                    sigma: c.sigma().to_vec(),
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MixtureModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let record = ModelRecord::deserialize(deserializer)?;
        model_from_record(record).map_err(serde::de::Error::custom)
    }
}

fn model_from_record(record: ModelRecord) -> Result<MixtureModel> {
    if record.format != MODEL_FORMAT {
        return Err(Error::Parse(format!(
            "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
            record.format
        )));
    }
    if record.s != record.components.len() || record.s != record.weights.len() {
        return Err(Error::Parse(format!(
            "declared s = {} but found {} weights and {} components",
            record.s,
            record.weights.len(),
            record.components.len()
        )));
    }
    let components = record
        .components
        .into_iter()
        .map(|c| {
            if c.mu.len() != record.p || c.sigma.len() != record.p {
                return Err(Error::Parse(format!(
                    "declared p = {} but a component disagrees",
                    record.p
                )));
            }
            MldParams::new(c.mu, c.sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(record.weights, components)
}

/// Model file text (17 significant digits per real).
pub fn model_to_json(model: &MixtureModel) -> Result<String> {
    crate::json::to_string(model)
}

/// Parses and validates model file text.
pub fn model_from_json(text: &str) -> Result<MixtureModel> {
    let record: ModelRecord = serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
    model_from_record(record)
}

pub fn save_model<W: Write>(model: &MixtureModel, mut destination: W) -> Result<()> {
    destination.write_all(model_to_json(model)?.as_bytes())?;
    Ok(())
}

pub fn load_model<R: Read>(mut source: R) -> Result<MixtureModel> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mld::{mld_cdf, mld_log_pdf};

    fn params(mu: &[f64], sigma: &[f64]) -> MldParams {
        MldParams::new(mu.to_vec(), sigma.to_vec()).unwrap()
    }

    fn reference_1d() -> MixtureModel {
        MixtureModel::new(vec![0.3, 0.7], vec![params(&[-2.0], &[1.0]), params(&[2.0], &[0.5])]).unwrap()
    }

    #[test]
    fn single_component_cdf_is_component_cdf() {
        let c = params(&[0.5, -1.0], &[2.0, 0.3]);
        let m = MixtureModel::single(c.clone());
        for x in [[0.0, 0.0], [1.0, -3.0], [-2.0, 5.0]] {
            assert_eq!(mixture_cdf(&x, &m).unwrap(), mld_cdf(&x, &c).unwrap());
            assert!((mixture_log_pdf(&x, &m).unwrap() - mld_log_pdf(&x, &c).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_components_collapse() {
        let c = params(&[1.0], &[2.0]);
        let m = MixtureModel::new(vec![0.5, 0.5], vec![c.clone(), c.clone()]).unwrap();
        for x in [-3.0, 0.0, 4.0] {
            assert!((mixture_cdf(&[x], &m).unwrap() - mld_cdf(&[x], &c).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_cdf_value() {
        let expected = 0.3 / (1.0 + (-2.0f64).exp()) + 0.7 / (1.0 + 4.0f64.exp());
        assert!((mixture_cdf(&[0.0], &reference_1d()).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn reference_pdf_value_term_by_term() {
        // l(x; mu, s) = e^{-z} / (s (1 + e^{-z})^2), z = (x - mu)/s
        let term = |x: f64, mu: f64, s: f64| {
            let z: f64 = (x - mu) / s;
            (-z).exp() / (s * (1.0 + (-z).exp()).powi(2))
        };
        let expected = 0.3 * term(0.0, -2.0, 1.0) + 0.7 * term(0.0, 2.0, 0.5);
        let got = mixture_pdf(&[0.0], &reference_1d()).unwrap();
        assert!((got - expected).abs() <= 1e-14 * expected, "{got} vs {expected}");
    }

    #[test]
    fn symmetric_mixture_pdf_is_even() {
        let a = 1.7;
        let m = MixtureModel::new(vec![0.5, 0.5], vec![params(&[-a], &[1.0]), params(&[a], &[1.0])]).unwrap();
        for x in [0.5, 1.0, 2.0] {
            let l = mixture_pdf(&[x], &m).unwrap();
            let r = mixture_pdf(&[-x], &m).unwrap();
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_validation() {
        let c = || params(&[0.0], &[1.0]);
        assert!(MixtureModel::new(vec![0.5, 0.6], vec![c(), c()]).is_err());
        assert!(MixtureModel::new(vec![1.0, 0.0], vec![c(), c()]).is_err());
        assert!(MixtureModel::new(vec![0.5], vec![c(), c()]).is_err());
        assert!(MixtureModel::new(vec![], vec![]).is_err());
        let m = MixtureModel::new(vec![0.5 + 4e-10, 0.5], vec![c(), c()]).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mixed = MixtureModel::new(vec![0.5, 0.5], vec![c(), params(&[0.0, 0.0], &[1.0, 1.0])]);
        assert!(matches!(mixed, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cdf_dimension_mismatch() {
        assert!(mixture_cdf(&[0.0, 1.0], &reference_1d()).is_err());
        assert!(mixture_pdf(&[f64::NAN], &reference_1d()).is_err());
    }

    #[test]
    fn log_likelihood_single_row_and_additivity() {
        let c = params(&[1.0, 2.0], &[0.5, 3.0]);
        let m = MixtureModel::single(c.clone());
        let row = Dataset::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!((log_likelihood(&row, &m).unwrap() - mld_log_pdf(&[1.0, 2.0], &c).unwrap()).abs() < 1e-14);

        let (data, _) = sample_mixture(&reference_1d(), 500, 4).unwrap();
        let mut doubled = data.as_flat().to_vec();
        doubled.extend_from_slice(data.as_flat());
        let doubled = Dataset::from_flat(doubled, 1).unwrap();
        let single = log_likelihood(&data, &reference_1d()).unwrap();
        let double = log_likelihood(&doubled, &reference_1d()).unwrap();
        assert!((double - 2.0 * single).abs() <= 1e-9 * single.abs());
        assert!(log_likelihood(&row, &reference_1d()).is_err());
    }

    #[test]
    fn sample_mixture_labels_and_determinism() {
        let m = MixtureModel::single(params(&[0.0], &[1.0]));
        let (_, labels) = sample_mixture(&m, 1000, 1).unwrap();
        assert!(labels.iter().all(|&l| l == 0));

        let (a, la) = sample_mixture(&reference_1d(), 10_000, 9).unwrap();
        let (b, lb) = sample_mixture(&reference_1d(), 10_000, 9).unwrap();
        assert_eq!(la, lb);
        assert!(a
            .as_flat()
            .iter()
            .zip(b.as_flat())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(sample_mixture(&m, 0, 1).is_err());
    }

    #[test]
    fn label_frequency_matches_weights() {
        // binomial sd for n = 1e5, pi = 0.3 is 0.00145; 0.005 is ~3.4 sd
        let (_, labels) = sample_mixture(&reference_1d(), 100_000, 2024).unwrap();
        let freq = labels.iter().filter(|&&l| l == 0).count() as f64 / labels.len() as f64;
        assert!((freq - 0.3).abs() < 0.005, "{freq}");
    }

    #[test]
    fn json_rejects_bad_files() {
        let bad_weights = r#"{"format":"logimix-model-v1","p":1,"s":2,"weights":[0.5,0.6],
            "components":[{"mu":[0],"sigma":[1]},{"mu":[1],"sigma":[1]}]}"#;
        assert!(model_from_json(bad_weights).is_err());
        let zero_sigma = r#"{"format":"logimix-model-v1","p":1,"s":1,"weights":[1.0],
            "components":[{"mu":[0],"sigma":[0]}]}"#;
        assert!(model_from_json(zero_sigma).is_err());
        let wrong_format = r#"{"format":"other","p":1,"s":1,"weights":[1.0],
            "components":[{"mu":[0],"sigma":[1]}]}"#;
        assert!(model_from_json(wrong_format).is_err());
        let wrong_p = r#"{"format":"logimix-model-v1","p":2,"s":1,"weights":[1.0],
            "components":[{"mu":[0],"sigma":[1]}]}"#;
        assert!(model_from_json(wrong_p).is_err());
        assert!(model_from_json("{").is_err());
    }

    #[test]
    fn json_tolerates_decimal_noise() {
        let noisy = r#"{"format":"logimix-model-v1","p":1,"s":2,"weights":[0.3000000001,0.7],
            "components":[{"mu":[0],"sigma":[1]},{"mu":[1],"sigma":[1]}]}"#;
        let m = model_from_json(noisy).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permuted_validation() {
        let m = reference_1d();
        assert!(m.permuted(&[0, 0]).is_err());
        assert!(m.permuted(&[0]).is_err());
        let q = m.permuted(&[1, 0]).unwrap();
        assert_eq!(q.weights(), &[0.7, 0.3]);
    }
}
