//! Regression models used as explanation targets.

mod linear;
mod mlp;
mod tree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use linear::{LinearModel, LinearSpec};
pub use mlp::{MlpModel, MlpSpec};
pub use tree::{TreeModel, TreeNode, TreeSpec};

use crate::error::{ensure_dim, Error, Result};
use crate::rng::Seed;

/// A model that is exactly `coefficients · x + intercept`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFunction {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl AffineFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// A black-box regression function of `dim` features.
pub trait Predictor: Send + Sync {
    fn dim(&self) -> usize;

    fn predict_one(&self, x: &[f64]) -> f64;

    fn predict_batch(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|r| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x[(r, j)];
                }
                self.predict_one(&row)
            })
            .collect()
    }

    /// The model's affine form, when it is exactly affine.
    fn affine(&self) -> Option<AffineFunction> {
        None
    }
}

impl Predictor for AffineFunction {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn affine(&self) -> Option<AffineFunction> {
        Some(self.clone())
    }
}

/// A predictor that returns the same value everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantModel {
    pub dim: usize,
    pub value: f64,
}

impl Predictor for ConstantModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_one(&self, _x: &[f64]) -> f64 {
        self.value
    }

    fn affine(&self) -> Option<AffineFunction> {
        Some(AffineFunction { coefficients: vec![0.0; self.dim], intercept: self.value })
    }
}

/// Any closure `&[f64] -> f64` as a predictor.
pub struct FnModel<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Predictor for FnModel<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear(LinearSpec),
    Tree(TreeSpec),
    Mlp(MlpSpec),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Mlp(MlpSpec::default())
    }
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Linear(_) => "linear",
            ModelSpec::Tree(_) => "tree",
            ModelSpec::Mlp(_) => "mlp",
        }
    }

    /// Default hyperparameters for a family name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(ModelSpec::Linear(LinearSpec::default())),
            "tree" => Ok(ModelSpec::Tree(TreeSpec::default())),
            "mlp" => Ok(ModelSpec::Mlp(MlpSpec::default())),
            other => Err(Error::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Linear(s) => s.validate(),
            ModelSpec::Tree(s) => s.validate(),
            ModelSpec::Mlp(s) => s.validate(),
        }
    }

    /// Fits the model; `seed` drives any randomness (MLP init and shuffling).
    pub fn fit(&self, features: &DMatrix<f64>, labels: &[f64], seed: Seed) -> Result<TrainedModel> {
        self.validate()?;
        ensure_dim(features.nrows(), labels.len())?;
        if features.nrows() == 0 {
            return Err(Error::Training("empty training set".into()));
        }
        if features.iter().chain(labels).any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite features or labels".into()));
        }
        let params = match self {
            ModelSpec::Linear(s) => ModelParams::Linear(LinearModel::fit(s, features, labels)?),
            ModelSpec::Tree(s) => ModelParams::Tree(TreeModel::fit(s, features, labels)),
            ModelSpec::Mlp(s) => ModelParams::Mlp(MlpModel::fit(s, features, labels, seed)?),
        };
        let preds = params.predict_batch(features);
        let train_mse = mse(&preds, labels);
        if !train_mse.is_finite() {
            return Err(Error::Training("training diverged".into()));
        }
        Ok(TrainedModel { spec: self.clone(), seed, params, train_mse })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearModel),
    Tree(TreeModel),
    Mlp(MlpModel),
}

impl ModelParams {
    fn inner(&self) -> &dyn Predictor {
        match self {
            ModelParams::Linear(m) => m,
            ModelParams::Tree(m) => m,
            ModelParams::Mlp(m) => m,
        }
    }

    fn predict_batch(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.inner().predict_batch(x)
    }
}

/// A fitted model with its spec and training error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub seed: Seed,
    pub params: ModelParams,
    pub train_mse: f64,
}

impl TrainedModel {
    /// Checked single prediction.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        ensure_dim(self.dim(), x.len())?;
        Ok(self.predict_one(x))
    }

    /// Checked batch prediction.
    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), x.ncols())?;
        Ok(self.predict_batch(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Predictor for TrainedModel {
    fn dim(&self) -> usize {
        self.params.inner().dim()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        self.params.inner().predict_one(x)
    }

    fn predict_batch(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.params.predict_batch(x)
    }

    fn affine(&self) -> Option<AffineFunction> {
        self.params.inner().affine()
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}
