//! Joint feature distributions with exact conditioning.
//!
//! Three synthetic families are supported: multivariate Gaussian, mixture of
//! Gaussians and multinomial. Each is closed under conditioning on a subset of
//! coordinates, which is what lets every evaluation metric use exact
//! conditional distributions instead of estimates. Conditioning on every
//! coordinate yields a [`PointMass`] at the query point.
//!
//! Distributions serialize to JSON as `{"family": ..., <parameters>}` with
//! covariance matrices stored row-major.

mod gaussian;
mod mixture;
mod multinomial;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use gaussian::GaussianSpec;
pub use mixture::{MixtureComponent, MixtureSpec};
pub use multinomial::MultinomialSpec;

use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::subset::FeatureSet;

/// Tolerance for "sums to one" checks on weights and probabilities.
pub const SUM_TOLERANCE: f64 = 1e-10;
/// Tolerance for covariance symmetry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Equicorrelation covariance: ones on the diagonal, `rho` elsewhere.
///
/// Positive definite exactly when `-1/(dim-1) < rho < 1`.
pub fn equicorrelation_sigma(dim: usize, rho: f64) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let lower = if dim > 1 { -1.0 / (dim as f64 - 1.0) } else { f64::NEG_INFINITY };
    if !rho.is_finite() || (dim > 1 && !(rho > lower && rho < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "rho={rho} outside the admissible interval ({lower}, 1) for dim={dim}"
        )));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho }))
}

/// A distribution concentrated on a single point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub values: Vec<f64>,
}

/// Fixed coordinates `x_S` for a conditioning operation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionalQuery {
    pub fixed_indices: Vec<usize>,
    pub fixed_values: Vec<f64>,
}

impl ConditionalQuery {
    pub fn new(fixed_indices: Vec<usize>, fixed_values: Vec<f64>) -> Self {
        ConditionalQuery { fixed_indices, fixed_values }
    }

    /// Fixes the coordinates in `set` to their values in `x`.
    pub fn from_point(x: &[f64], set: FeatureSet) -> Self {
        let fixed_indices = set.to_vec();
        let fixed_values = fixed_indices.iter().map(|&i| x[i]).collect();
        ConditionalQuery { fixed_indices, fixed_values }
    }

    pub fn is_empty(&self) -> bool {
        self.fixed_indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.fixed_indices.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.fixed_indices.len() != self.fixed_values.len() {
            return Err(Error::InvalidQuery(format!(
                "{} indices but {} values",
                self.fixed_indices.len(),
                self.fixed_values.len()
            )));
        }
        let mut seen = vec![false; dim];
        for &i in &self.fixed_indices {
            if i >= dim {
                return Err(Error::InvalidQuery(format!("index {i} out of range for dim {dim}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidQuery(format!("index {i} repeated")));
            }
        }
        if let Some(v) = self.fixed_values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidQuery(format!("non-finite fixed value {v}")));
        }
        Ok(())
    }

    /// Indices not fixed by the query, ascending.
    pub fn free_indices(&self, dim: usize) -> Vec<usize> {
        (0..dim).filter(|i| !self.fixed_indices.contains(i)).collect()
    }

    /// Fixed indices and values sorted by index.
    pub(crate) fn sorted(&self) -> (Vec<usize>, Vec<f64>) {
        let mut pairs: Vec<(usize, f64)> = self
            .fixed_indices
            .iter()
            .copied()
            .zip(self.fixed_values.iter().copied())
            .collect();
        pairs.sort_by_key(|p| p.0);
        pairs.into_iter().unzip()
    }

    /// The full point: fixed coordinates from the query, free ones from `free_values`.
    pub fn merge(&self, dim: usize, free_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        let free = self.free_indices(dim);
        for (&i, &v) in free.iter().zip(free_values) {
            out[i] = v;
        }
        for (&i, &v) in self.fixed_indices.iter().zip(&self.fixed_values) {
            out[i] = v;
        }
        out
    }
}

/// Shared random inputs for conditional sampling.
///
/// Every conditional sampler reads the normal draws at the columns of the
/// coordinates it generates, so conditionals of the same point on nested
/// subsets reuse the same randomness for the coordinates they share.
#[derive(Clone, Debug)]
pub struct NoiseBank {
    pub normals: DMatrix<f64>,
    pub uniforms: Vec<f64>,
    pub trial_uniforms: DMatrix<f64>,
}

impl NoiseBank {
    pub fn generate(n: usize, dim: usize, max_trials: usize, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let mut normals = DMatrix::zeros(n, dim);
        let mut uniforms = Vec::with_capacity(n);
        let mut trial_uniforms = DMatrix::zeros(n, max_trials);
        for r in 0..n {
            for c in 0..dim {
                normals[(r, c)] = rng.sample(StandardNormal);
            }
            uniforms.push(rng.random::<f64>());
            for c in 0..max_trials {
                trial_uniforms[(r, c)] = rng.random::<f64>();
            }
        }
        NoiseBank { normals, uniforms, trial_uniforms }
    }

    pub fn len(&self) -> usize {
        self.uniforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uniforms.is_empty()
    }
}

/// A joint feature distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Distribution {
    Gaussian(GaussianSpec),
    Mixture(MixtureSpec),
    Multinomial(MultinomialSpec),
    Point(PointMass),
}

impl Distribution {
    /// Zero-mean Gaussian with equicorrelation covariance.
    pub fn equicorrelated_gaussian(dim: usize, rho: f64) -> Result<Self> {
        let sigma = equicorrelation_sigma(dim, rho)?;
        Ok(Distribution::Gaussian(GaussianSpec::new(vec![0.0; dim], sigma)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Distribution::Gaussian(g) => g.dim(),
            Distribution::Mixture(m) => m.dim(),
            Distribution::Multinomial(m) => m.dim(),
            Distribution::Point(p) => p.values.len(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Distribution::Gaussian(_) => "gaussian",
            Distribution::Mixture(_) => "mixture",
            Distribution::Multinomial(_) => "multinomial",
            Distribution::Point(_) => "point",
        }
    }

    /// `n` i.i.d. rows. Identical `(self, n, seed)` gives bit-identical output.
    pub fn sample(&self, n: usize, seed: Seed) -> DMatrix<f64> {
        let mut rng = seed.rng();
        match self {
            Distribution::Gaussian(g) => g.sample(n, &mut rng),
            Distribution::Mixture(m) => m.sample(n, &mut rng),
            Distribution::Multinomial(m) => m.sample(n, &mut rng),
            Distribution::Point(p) => DMatrix::from_fn(n, p.values.len(), |_, j| p.values[j]),
        }
    }

    /// Distribution of the free coordinates given the query.
    ///
    /// An empty query returns an identical copy; a query fixing every
    /// coordinate returns a [`PointMass`] at the full point.
    pub fn condition(&self, query: &ConditionalQuery) -> Result<Distribution> {
        let dim = self.dim();
        query.validate(dim)?;
        if query.is_empty() {
            return Ok(self.clone());
        }
        if let Distribution::Multinomial(m) = self {
            m.validate_counts(query)?;
        }
        if query.len() == dim {
            return Ok(Distribution::Point(PointMass { values: query.merge(dim, &[]) }));
        }
        match self {
            Distribution::Gaussian(g) => Ok(Distribution::Gaussian(g.condition(query)?.0)),
            Distribution::Mixture(m) => Ok(Distribution::Mixture(m.condition(query)?)),
            Distribution::Multinomial(m) => Ok(Distribution::Multinomial(m.condition(query)?)),
            Distribution::Point(p) => {
                let free: Vec<f64> = query.free_indices(dim).iter().map(|&i| p.values[i]).collect();
                Ok(Distribution::Point(PointMass { values: free }))
            }
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            Distribution::Gaussian(g) => g.mu().clone(),
            Distribution::Mixture(m) => m.mean(),
            Distribution::Multinomial(m) => m.mean(),
            Distribution::Point(p) => DVector::from_column_slice(&p.values),
        }
    }

    /// Per-coordinate variances of the marginals.
    pub fn marginal_variances(&self) -> DVector<f64> {
        match self {
            Distribution::Gaussian(g) => g.sigma().diagonal(),
            Distribution::Mixture(m) => m.marginal_variances(),
            Distribution::Multinomial(m) => m.marginal_variances(),
            Distribution::Point(p) => DVector::zeros(p.values.len()),
        }
    }

    /// Expected full point given the query: fixed coordinates copied, free ones
    /// at their conditional mean.
    pub fn conditional_point(&self, query: &ConditionalQuery) -> Result<Vec<f64>> {
        let dim = self.dim();
        if query.len() == dim {
            query.validate(dim)?;
            return Ok(query.merge(dim, &[]));
        }
        let cond = self.condition(query)?;
        Ok(query.merge(dim, cond.mean().as_slice()))
    }

    /// Natural-log density (log pmf for multinomial).
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        crate::error::ensure_dim(self.dim(), x.len())?;
        match self {
            Distribution::Gaussian(g) => Ok(g.log_density(x)),
            Distribution::Mixture(m) => Ok(m.log_density(x)),
            Distribution::Multinomial(m) => m.log_pmf(x),
            Distribution::Point(p) => Ok(if p.values.as_slice() == x { 0.0 } else { f64::NEG_INFINITY }),
        }
    }

    /// Largest trial count a noise bank needs to drive this distribution's
    /// conditionals.
    pub fn max_trials(&self) -> usize {
        match self {
            Distribution::Multinomial(m) => m.trials() as usize,
            _ => 0,
        }
    }

    /// Samples driven by a [`NoiseBank`], one row per bank row.
    ///
    /// `columns[k]` is the bank column feeding this distribution's `k`-th
    /// coordinate; pass the original feature indices of a conditional's free
    /// coordinates to share randomness across conditionals.
    pub fn sample_from_noise(&self, bank: &NoiseBank, columns: &[usize]) -> DMatrix<f64> {
        debug_assert_eq!(columns.len(), self.dim());
        match self {
            Distribution::Gaussian(g) => g.transform(bank, columns),
            Distribution::Mixture(m) => m.transform(bank, columns),
            Distribution::Multinomial(m) => m.transform(bank),
            Distribution::Point(p) => DMatrix::from_fn(bank.len(), p.values.len(), |_, j| p.values[j]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
