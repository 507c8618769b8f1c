use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ExplainerConfig;
use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::linalg::factor_strict;
use crate::models::Predictor;
use crate::rng::{stream, Seed};

/// Interpretable space in which the local surrogate is fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimeRepresentation {
    /// Binary "same quartile as x" indicators over marginal perturbations.
    #[default]
    Quartile,
    /// Gaussian perturbations around x, fit on the raw features.
    Continuous,
}

/// Per-distribution state shared by all explained points.
#[derive(Clone, Debug)]
pub struct LimeState {
    pool: DMatrix<f64>,
    quartiles: Vec<[f64; 3]>,
    scale: Vec<f64>,
}

/// Linearly interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn bin(v: f64, q: &[f64; 3]) -> usize {
    q.iter().filter(|b| v > **b).count()
}

impl LimeState {
    pub fn new(cfg: &ExplainerConfig, dist: &Distribution) -> Self {
        let n = cfg.perturbation_count.max(1000);
        let pool = dist.sample(n, cfg.seed.derive(stream::PERTURBATION));
        let quartiles = (0..pool.ncols())
            .map(|j| {
                let mut col: Vec<f64> = pool.column(j).iter().copied().collect();
                col.sort_by(f64::total_cmp);
                [percentile(&col, 0.25), percentile(&col, 0.5), percentile(&col, 0.75)]
            })
            .collect();
        let scale = dist.marginal_variances().iter().map(|v| v.max(0.0).sqrt()).collect();
        LimeState { pool, quartiles, scale }
    }

    /// Returns the surrogate's coefficients and intercept.
    pub fn explain(&self, cfg: &ExplainerConfig, model: &dyn Predictor, x: &[f64], seed: Seed) -> Result<(Vec<f64>, f64)> {
        let d = x.len();
        let n = cfg.perturbation_count;
        let kw = cfg.kernel_width(d);
        let mut rng = seed.rng();
        let mut samples = DMatrix::<f64>::zeros(n, d);
        let mut design = DMatrix::<f64>::zeros(n, d);
        let mut weights = vec![0.0; n];
        for j in 0..d {
            samples[(0, j)] = x[j];
        }
        match cfg.lime_representation {
            LimeRepresentation::Quartile => {
                let own: Vec<usize> = (0..d).map(|j| bin(x[j], &self.quartiles[j])).collect();
                for r in 1..n {
                    for j in 0..d {
                        samples[(r, j)] = self.pool[(rng.random_range(0..self.pool.nrows()), j)];
                    }
                }
                for r in 0..n {
                    let mut dist2 = 0.0;
                    for j in 0..d {
                        let same = bin(samples[(r, j)], &self.quartiles[j]) == own[j];
                        design[(r, j)] = if same { 1.0 } else { 0.0 };
                        dist2 += 1.0 - design[(r, j)];
                    }
                    weights[r] = (-dist2 / (kw * kw)).exp();
                }
            }
            LimeRepresentation::Continuous => {
                for r in 0..n {
                    let mut dist2 = 0.0;
                    for j in 0..d {
                        let u: f64 = if r == 0 { 0.0 } else { kw * rng.sample::<f64, _>(StandardNormal) };
                        design[(r, j)] = u;
                        samples[(r, j)] = x[j] + u * self.scale[j];
                        dist2 += u * u;
                    }
                    weights[r] = (-dist2 / (kw * kw)).exp();
                }
            }
        }
        let y = model.predict_batch(&samples);
        let (mut beta, intercept) = weighted_ridge(&design, &y, &weights, cfg.ridge)?;
        if cfg.lime_representation == LimeRepresentation::Continuous {
            // Standardized slopes back to raw-feature slopes.
            for (b, s) in beta.iter_mut().zip(&self.scale) {
                *b = if *s > 0.0 { *b / s } else { 0.0 };
            }
        }
        Ok((beta, intercept))
    }
}

/// Weighted ridge regression with an unpenalized intercept.
pub(crate) fn weighted_ridge(x: &DMatrix<f64>, y: &[f64], w: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let (n, d) = x.shape();
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Singular("all regression weights are zero".into()));
    }
    let xm: Vec<f64> = (0..d).map(|j| (0..n).map(|r| w[r] * x[(r, j)]).sum::<f64>() / wsum).collect();
    let ym = (0..n).map(|r| w[r] * y[r]).sum::<f64>() / wsum;
    let mut a = DMatrix::<f64>::identity(d, d) * lambda;
    let mut b = DVector::<f64>::zeros(d);
    let mut row = vec![0.0; d];
    for r in 0..n {
        for j in 0..d {
            row[j] = x[(r, j)] - xm[j];
        }
        let yr = y[r] - ym;
        for i in 0..d {
            let wi = w[r] * row[i];
            b[i] += wi * yr;
            for j in i..d {
                a[(i, j)] += wi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let chol = factor_strict(&a).ok_or_else(|| Error::Singular("surrogate normal equations are singular".into()))?;
    let beta = chol.solve(&b);
    let intercept = ym - beta.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    Ok((beta.as_slice().to_vec(), intercept))
}
