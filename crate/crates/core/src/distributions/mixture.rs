use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, ConditionalQuery, GaussianSpec, NoiseBank, SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub gaussian: GaussianSpec,
}

/// Finite mixture of Gaussians sharing one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct MixtureSpec {
    components: Vec<MixtureComponent>,
}

#[derive(Deserialize)]
struct RawMixture {
    components: Vec<MixtureComponent>,
}

impl TryFrom<RawMixture> for MixtureSpec {
    type Error = Error;
    fn try_from(raw: RawMixture) -> Result<Self> {
        MixtureSpec::new(raw.components)
    }
}

impl MixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture needs at least one component".into()))?;
        let d = first.gaussian.dim();
        if let Some(c) = components.iter().find(|c| c.gaussian.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.gaussian.dim() });
        }
        if let Some(c) = components.iter().find(|c| !(c.weight > 0.0 && c.weight <= 1.0)) {
            return Err(Error::InvalidParameter(format!("component weight {} outside (0, 1]", c.weight)));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(MixtureSpec { components })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].gaussian.dim()
    }

    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return j;
            }
        }
        self.components.len() - 1
    }

    pub(crate) fn sample(&self, n: usize, rng: &mut Rng) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, self.dim());
        for r in 0..n {
            let j = self.pick(rng.random::<f64>());
            let row = self.components[j].gaussian.sample(1, rng);
            out.row_mut(r).copy_from(&row.row(0));
        }
        out
    }

    pub(crate) fn transform(&self, bank: &NoiseBank, columns: &[usize]) -> DMatrix<f64> {
        let per_component: Vec<DMatrix<f64>> =
            self.components.iter().map(|c| c.gaussian.transform(bank, columns)).collect();
        let mut out = DMatrix::zeros(bank.len(), self.dim());
        for r in 0..bank.len() {
            let j = self.pick(bank.uniforms[r]);
            out.row_mut(r).copy_from(&per_component[j].row(r));
        }
        out
    }

    /// Per-component Gaussian conditionals reweighted by each component's
    /// marginal density at the fixed values. Components whose weight
    /// underflows to zero are dropped.
    pub(crate) fn condition(&self, query: &ConditionalQuery) -> Result<MixtureSpec> {
        let mut conditioned = Vec::with_capacity(self.components.len());
        let mut log_w = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let (g, log_marginal) = c.gaussian.condition(query)?;
            conditioned.push(g);
            log_w.push(c.weight.ln() + log_marginal);
        }
        let norm = log_sum_exp(&log_w);
        if !norm.is_finite() {
            return Err(Error::Conditioning("fixed values have zero density under every component".into()));
        }
        let mut components: Vec<MixtureComponent> = conditioned
            .into_iter()
            .zip(&log_w)
            .map(|(gaussian, lw)| MixtureComponent { weight: (lw - norm).exp(), gaussian })
            .filter(|c| c.weight > 0.0)
            .collect();
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(MixtureSpec { components })
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, c| acc + c.gaussian.mu() * c.weight)
    }

    pub fn marginal_variances(&self) -> DVector<f64> {
        let mean = self.mean();
        let second = self.components.iter().fold(DVector::zeros(self.dim()), |acc, c| {
            let mu = c.gaussian.mu();
            acc + (c.gaussian.sigma().diagonal() + mu.component_mul(mu)) * c.weight
        });
        second - mean.component_mul(&mean)
    }

    pub(crate) fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> =
            self.components.iter().map(|c| c.weight.ln() + c.gaussian.log_density(x)).collect();
        log_sum_exp(&terms)
    }
}
