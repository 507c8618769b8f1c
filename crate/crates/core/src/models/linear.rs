use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AffineFunction, Predictor};
use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for the normal equations.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearSpec {
    /// Ridge penalty on the (centered) coefficients.
    pub lambda: f64,
}

impl Default for LinearSpec {
    fn default() -> Self {
        LinearSpec { lambda: 1e-6 }
    }
}

impl LinearSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge lambda {} must be nonnegative", self.lambda)));
        }
        Ok(())
    }
}

/// Ridge regression with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    /// Solves `(Xcᵀ Xc + λI) β = Xcᵀ yc` on centered data through the
    /// eigendecomposition `Xcᵀ Xc = V E Vᵀ`, so `β = V (E + λ)⁻¹ Vᵀ Xcᵀ yc`.
    /// Eigenvalues below the rank tolerance are dropped, which makes `λ → 0`
    /// the pseudo-inverse fit and keeps collinear designs stable.
    pub fn fit(spec: &LinearSpec, x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, d) = x.shape();
        let x_mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut xc = x.clone();
        for j in 0..d {
            xc.column_mut(j).add_scalar_mut(-x_mean[j]);
        }
        let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
        let gram = xc.transpose() * &xc;
        let rhs = xc.transpose() * yc;
        let eig = gram.symmetric_eigen();
        let e_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let tol = e_max * RANK_TOLERANCE;
        let vtr = eig.eigenvectors.transpose() * rhs;
        let scaled = DVector::from_fn(d, |k, _| {
            let e = eig.eigenvalues[k];
            if e > tol {
                vtr[k] / (e + spec.lambda)
            } else {
                0.0
            }
        });
        let beta = &eig.eigenvectors * scaled;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Training("linear solve produced non-finite coefficients".into()));
        }
        let intercept = y_mean - beta.dot(&x_mean);
        Ok(LinearModel { coefficients: beta.as_slice().to_vec(), intercept })
    }
}

impl Predictor for LinearModel {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    fn affine(&self) -> Option<AffineFunction> {
        Some(AffineFunction { coefficients: self.coefficients.clone(), intercept: self.intercept })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Distribution;
    use crate::rng::Seed;

    #[test]
    fn recovers_noiseless_coefficients() {
        let x = Distribution::equicorrelated_gaussian(2, 0.0).unwrap().sample(100, Seed(1));
        let y: Vec<f64> = (0..100).map(|r| 2.0 * x[(r, 0)]).collect();
        let m = LinearModel::fit(&LinearSpec::default(), &x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6);
        assert!(m.coefficients[1].abs() < 1e-6);
        assert!(m.intercept.abs() < 1e-6);
    }

    #[test]
    fn prediction_is_a_dot_product() {
        let m = LinearModel { coefficients: vec![2.0, 0.0], intercept: 0.0 };
        assert_eq!(m.predict_one(&[3.0, 7.0]), 6.0);
    }

    #[test]
    fn small_ridge_limit_is_stable() {
        // Collinear design: the pseudo-inverse solution splits weight evenly.
        let x = DMatrix::from_fn(50, 2, |r, _| r as f64 / 10.0);
        let y: Vec<f64> = (0..50).map(|r| r as f64 / 5.0).collect();
        let a = LinearModel::fit(&LinearSpec { lambda: 1e-10 }, &x, &y).unwrap();
        let b = LinearModel::fit(&LinearSpec { lambda: 1e-12 }, &x, &y).unwrap();
        for j in 0..2 {
            assert!((a.coefficients[j] - b.coefficients[j]).abs() <= 1e-6);
            assert!((a.coefficients[j] - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn underdetermined_fit_uses_ridge_path() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        let m = LinearModel::fit(&LinearSpec::default(), &x, &[1.0, 2.0]).unwrap();
        assert!(m.coefficients.iter().all(|c| c.is_finite()));
        assert!((m.predict_one(&[1.0, 0.0, 2.0]) - 1.0).abs() < 1e-4);
    }
}
