use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ConditionalQuery, NoiseBank, SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Multinomial counts over `dim` categories from `trials` draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMultinomial")]
pub struct MultinomialSpec {
    trials: u64,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMultinomial {
    trials: u64,
    probs: Vec<f64>,
}

impl TryFrom<RawMultinomial> for MultinomialSpec {
    type Error = Error;
    fn try_from(raw: RawMultinomial) -> Result<Self> {
        MultinomialSpec::new(raw.trials, raw.probs)
    }
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

impl MultinomialSpec {
    pub fn new(trials: u64, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("multinomial needs at least one category".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter("multinomial probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("multinomial probabilities sum to {total}, not 1")));
        }
        Ok(MultinomialSpec { trials, probs })
    }

    pub fn uniform(trials: u64, dim: usize) -> Result<Self> {
        MultinomialSpec::new(trials, vec![1.0 / dim as f64; dim])
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn category(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = j;
                if u < acc {
                    return j;
                }
            }
        }
        last_positive
    }

    fn counts_from(&self, uniforms: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut counts = vec![0.0; self.dim()];
        for u in uniforms.take(self.trials as usize) {
            counts[self.category(u)] += 1.0;
        }
        counts
    }

    pub(crate) fn sample(&self, n: usize, rng: &mut Rng) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, self.dim());
        for r in 0..n {
            let counts = self.counts_from(std::iter::repeat_with(|| rng.random::<f64>()));
            for (j, c) in counts.into_iter().enumerate() {
                out[(r, j)] = c;
            }
        }
        out
    }

    pub(crate) fn transform(&self, bank: &NoiseBank) -> DMatrix<f64> {
        assert!(bank.trial_uniforms.ncols() >= self.trials as usize, "noise bank has too few trial columns");
        let mut out = DMatrix::zeros(bank.len(), self.dim());
        for r in 0..bank.len() {
            let counts = self.counts_from(bank.trial_uniforms.row(r).iter().copied());
            for (j, c) in counts.into_iter().enumerate() {
                out[(r, j)] = c;
            }
        }
        out
    }

    /// Checks that fixed values form a feasible partial count vector.
    pub(crate) fn validate_counts(&self, query: &ConditionalQuery) -> Result<()> {
        let mut fixed_total = 0.0;
        let mut fixed_prob = 0.0;
        for (&i, &v) in query.fixed_indices.iter().zip(&query.fixed_values) {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::InvalidQuery(format!("count {v} at index {i} is not a nonnegative integer")));
            }
            if v > 0.0 && self.probs[i] == 0.0 {
                return Err(Error::InvalidQuery(format!("positive count at index {i} which has probability 0")));
            }
            fixed_total += v;
            fixed_prob += self.probs[i];
        }
        let m = self.trials as f64;
        if fixed_total > m {
            return Err(Error::InvalidQuery(format!("fixed counts sum to {fixed_total}, more than {m} trials")));
        }
        let free_prob: f64 = query.free_indices(self.dim()).iter().map(|&i| self.probs[i]).sum();
        let remaining = m - fixed_total;
        if remaining > 0.0 && (free_prob == 0.0 || fixed_prob >= 1.0) {
            return Err(Error::InvalidQuery(format!(
                "{remaining} trials remain but the free categories have probability 0"
            )));
        }
        Ok(())
    }

    /// `Multinomial(m - sum x_S, p_U / sum p_U)`; uniform probabilities when
    /// no trials remain and the free categories carry no mass.
    pub(crate) fn condition(&self, query: &ConditionalQuery) -> Result<MultinomialSpec> {
        self.validate_counts(query)?;
        let free = query.free_indices(self.dim());
        let fixed_total: f64 = query.fixed_values.iter().sum();
        let remaining = self.trials - fixed_total as u64;
        let free_prob: f64 = free.iter().map(|&i| self.probs[i]).sum();
        let probs = if free_prob > 0.0 {
            free.iter().map(|&i| self.probs[i] / free_prob).collect()
        } else {
            vec![1.0 / free.len() as f64; free.len()]
        };
        Ok(MultinomialSpec { trials: remaining, probs })
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.probs.iter().map(|p| self.trials as f64 * p))
    }

    pub fn marginal_variances(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.probs.iter().map(|p| self.trials as f64 * p * (1.0 - p)))
    }

    /// Log pmf; `-inf` for count vectors outside the support.
    pub(crate) fn log_pmf(&self, x: &[f64]) -> Result<f64> {
        if let Some(v) = x.iter().find(|v| **v < 0.0 || v.fract() != 0.0) {
            return Err(Error::InvalidQuery(format!("{v} is not a nonnegative integer count")));
        }
        let total: f64 = x.iter().sum();
        if total != self.trials as f64 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lp = ln_factorial(self.trials);
        for (&c, &p) in x.iter().zip(&self.probs) {
            if c > 0.0 {
                if p == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                lp += c * p.ln() - ln_factorial(c as u64);
            }
        }
        Ok(lp)
    }
}
