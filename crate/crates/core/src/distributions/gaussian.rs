use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ConditionalQuery, NoiseBank, SYMMETRY_TOLERANCE};
use crate::error::{Error, Result};
use crate::linalg::{self, Factor};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal `N(mu, sigma)` with a cached Cholesky factor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian", into = "RawGaussian")]
pub struct GaussianSpec {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    factor: Factor,
}

#[derive(Serialize, Deserialize)]
struct RawGaussian {
    mu: Vec<f64>,
    #[serde(with = "linalg::serde_rows")]
    sigma: DMatrix<f64>,
}

impl TryFrom<RawGaussian> for GaussianSpec {
    type Error = Error;
    fn try_from(raw: RawGaussian) -> Result<Self> {
        GaussianSpec::new(raw.mu, raw.sigma)
    }
}

impl From<GaussianSpec> for RawGaussian {
    fn from(g: GaussianSpec) -> Self {
        RawGaussian { mu: g.mu.as_slice().to_vec(), sigma: g.sigma }
    }
}

impl PartialEq for GaussianSpec {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.sigma == other.sigma
    }
}

impl GaussianSpec {
    /// Validates `mu` and `sigma`: finite mean, square symmetric covariance
    /// with strictly positive Cholesky pivots.
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidParameter("gaussian needs at least one dimension".into()));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "sigma is {}x{} but mu has length {d}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) || sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("gaussian parameters must be finite".into()));
        }
        let asym = linalg::max_asymmetry(&sigma);
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::InvalidParameter(format!("sigma is not symmetric (max |a_ij - a_ji| = {asym:e})")));
        }
        if linalg::factor_strict(&sigma).is_none() {
            return Err(Error::InvalidParameter("sigma is not positive definite".into()));
        }
        let factor = linalg::factor_with_fallback(&sigma)?;
        Ok(GaussianSpec { mu: DVector::from_vec(mu), sigma, factor })
    }

    /// Builds a conditional without the strict check; the covariance is
    /// symmetrized and factored with the ridge fallback.
    fn from_conditional(mu: DVector<f64>, mut sigma: DMatrix<f64>) -> Result<Self> {
        linalg::symmetrize(&mut sigma);
        let factor = linalg::factor_with_fallback(&sigma)
            .map_err(|e| Error::Conditioning(format!("conditional covariance: {e}")))?;
        Ok(GaussianSpec { mu, sigma, factor })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub(crate) fn sample(&self, n: usize, rng: &mut Rng) -> DMatrix<f64> {
        let d = self.dim();
        let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        self.affine_rows(&z)
    }

    /// Rows `mu + L z` for each row `z` of `z`.
    fn affine_rows(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z * self.factor.l().transpose();
        for mut row in out.row_iter_mut() {
            row += self.mu.transpose();
        }
        out
    }

    pub(crate) fn transform(&self, bank: &NoiseBank, columns: &[usize]) -> DMatrix<f64> {
        let z = DMatrix::from_fn(bank.len(), columns.len(), |r, k| bank.normals[(r, columns[k])]);
        self.affine_rows(&z)
    }

    /// Conditional of the free coordinates given the query, together with the
    /// log marginal density of the fixed values under `N(mu_2, sigma_22)`.
    pub(crate) fn condition(&self, query: &ConditionalQuery) -> Result<(GaussianSpec, f64)> {
        let d = self.dim();
        let (fixed, values) = query.sorted();
        let free = query.free_indices(d);
        let s22 = linalg::select(&self.sigma, &fixed, &fixed);
        let s12 = linalg::select(&self.sigma, &free, &fixed);
        let s11 = linalg::select(&self.sigma, &free, &free);
        let f22 = linalg::factor_with_fallback(&s22)
            .map_err(|e| Error::Conditioning(format!("conditioned block is singular: {e}")))?;
        let diff = DVector::from_fn(fixed.len(), |k, _| values[k] - self.mu[fixed[k]]);
        let alpha = f22.solve_vec(&diff);
        let mu1 = DVector::from_fn(free.len(), |k, _| self.mu[free[k]]);
        let mu_star = mu1 + &s12 * &alpha;
        let gain = f22.solve(&s12.transpose());
        let sigma_star = s11 - &s12 * gain;
        let log_marginal = -0.5 * (fixed.len() as f64 * LN_2PI + f22.ln_det() + diff.dot(&alpha));
        Ok((GaussianSpec::from_conditional(mu_star, sigma_star)?, log_marginal))
    }

    pub(crate) fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_fn(self.dim(), |i, _| x[i] - self.mu[i]);
        let quad = diff.dot(&self.factor.solve_vec(&diff));
        -0.5 * (self.dim() as f64 * LN_2PI + self.factor.ln_det() + quad)
    }
}
