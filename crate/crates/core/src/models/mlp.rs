use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{Error, Result};
use crate::linalg::serde_rows;
use crate::rng::{stream, Seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec { hidden: vec![50, 50], learning_rate: 1e-3, epochs: 200, batch_size: 64 }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("mlp hidden layer sizes must be nonempty and positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("mlp learning rate, epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One dense layer computing `x W + b` for row-vector inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in × fan_out`.
    #[serde(with = "serde_rows")]
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
}

/// Fully connected network with ReLU hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl MlpModel {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(input: usize, hidden: &[usize], seed: Seed) -> Self {
        let mut rng = seed.rng();
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound));
                let bias = (0..w[1]).map(|_| rng.random_range(-bound..bound)).collect();
                Dense { weights, bias }
            })
            .collect();
        MlpModel { layers }
    }

    pub fn fit(spec: &MlpSpec, x: &DMatrix<f64>, y: &[f64], seed: Seed) -> Result<Self> {
        let mut model = MlpModel::init(x.ncols(), &spec.hidden, seed.derive(stream::MODEL));
        let mut shuffle_rng = seed.derive(stream::TRAIN).rng();
        let n = x.nrows();
        let p = model.num_params();
        let mut m = vec![0.0; p];
        let mut v = vec![0.0; p];
        let mut params = model.params();
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0i32;
        for _ in 0..spec.epochs {
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(spec.batch_size) {
                let xb = DMatrix::from_fn(batch.len(), x.ncols(), |r, c| x[(batch[r], c)]);
                let yb: Vec<f64> = batch.iter().map(|&r| y[r]).collect();
                let (_, grad) = model.loss_and_gradient(&xb, &yb);
                step += 1;
                let c1 = 1.0 - BETA1.powi(step);
                let c2 = 1.0 - BETA2.powi(step);
                for i in 0..p {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    params[i] -= spec.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
                model.set_params(&params);
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("mlp parameters became non-finite".into()));
        }
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut k = 0;
        for l in &mut self.layers {
            let (rows, cols) = l.weights.shape();
            for r in 0..rows {
                for c in 0..cols {
                    l.weights[(r, c)] = params[k];
                    k += 1;
                }
            }
            for b in &mut l.bias {
                *b = params[k];
                k += 1;
            }
        }
    }

    fn affine_layer(l: &Dense, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = a * &l.weights;
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&l.bias) {
                *v += b;
            }
        }
        z
    }

    /// Pre-activations of every layer for a batch.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = Self::affine_layer(l, &a);
            if i + 1 < self.layers.len() {
                a = z.map(|v| v.max(0.0));
            }
            zs.push(z);
        }
        zs
    }

    /// Mean squared error on a batch and its gradient in [`MlpModel::params`] order.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<f64>) {
        let n = x.nrows() as f64;
        let zs = self.forward(x);
        let out = zs.last().expect("at least one layer");
        let resid = DVector::from_fn(x.nrows(), |r, _| out[(r, 0)] - y[r]);
        let loss = resid.norm_squared() / n;
        let mut delta = DMatrix::from_fn(x.nrows(), 1, |r, _| 2.0 * resid[r] / n);
        let mut grads: Vec<(DMatrix<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x.clone() } else { zs[i - 1].map(|v| v.max(0.0)) };
            let gw = input.transpose() * &delta;
            let gb: Vec<f64> = (0..delta.ncols()).map(|c| delta.column(c).sum()).collect();
            grads.push((gw, gb));
            if i > 0 {
                let mut back = &delta * self.layers[i].weights.transpose();
                back.zip_apply(&zs[i - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            for r in 0..gw.nrows() {
                flat.extend(gw.row(r).iter());
            }
            flat.extend(gb);
        }
        (loss, flat)
    }
}

impl Predictor for MlpModel {
    fn dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        self.predict_batch(&row)[0]
    }

    fn predict_batch(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            a = Self::affine_layer(l, &a);
            if i + 1 < self.layers.len() {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        a.column(0).iter().copied().collect()
    }
}
