//! Conditional expectations `E[f(x') | x'_S = x_S]`.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{ConditionalQuery, Distribution, NoiseBank};
use crate::error::{ensure_dim, Error, Result};
use crate::models::{AffineFunction, Predictor};
use crate::rng::{stream, Seed};
use crate::subset::FeatureSet;

/// Largest dimension for which Shapley values are enumerated exactly.
pub const MAX_SHAPLEY_DIM: usize = 20;
pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMode {
    /// Free features drawn from the conditional distribution given `x_S`.
    #[default]
    Observational,
    /// Free features drawn from the joint, independently of `x_S`.
    Interventional,
}

impl ExpectationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpectationMode::Observational => "observational",
            ExpectationMode::Interventional => "interventional",
        }
    }
}

impl std::str::FromStr for ExpectationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observational" => Ok(ExpectationMode::Observational),
            "interventional" => Ok(ExpectationMode::Interventional),
            other => Err(Error::InvalidParameter(format!("unknown expectation mode '{other}'"))),
        }
    }
}

/// How expectations are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Closed form for affine models, Monte Carlo otherwise.
    #[default]
    Auto,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpectationEngine {
    pub mode: ExpectationMode,
    pub mc_samples: usize,
    pub seed: Seed,
    pub estimator: Estimator,
    pub cache: bool,
}

impl Default for ExpectationEngine {
    fn default() -> Self {
        ExpectationEngine {
            mode: ExpectationMode::Observational,
            mc_samples: 1000,
            seed: Seed(0),
            estimator: Estimator::Auto,
            cache: true,
        }
    }
}

impl ExpectationEngine {
    pub fn new(mode: ExpectationMode, mc_samples: usize, seed: Seed) -> Self {
        ExpectationEngine { mode, mc_samples, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "mc_samples must be at least {MIN_MC_SAMPLES}, got {}",
                self.mc_samples
            )));
        }
        Ok(())
    }

    /// Binds the engine to a model and distribution.
    pub fn bind<'a>(self, model: &'a dyn Predictor, dist: &'a Distribution) -> Result<Expectations<'a>> {
        Expectations::new(self, model, dist)
    }
}

/// A Monte Carlo (or exact) estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Estimate { mean, std_error: 0.0 }
    }
}

/// Shapley values of one point under an engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyVector {
    pub values: Vec<f64>,
    /// `v(F) - v(∅)`.
    pub total: f64,
    /// `v(∅) = E[f]`.
    pub baseline: f64,
    /// `|Σ values - total|`.
    pub efficiency_residual: f64,
    /// Largest standard error among the `2^D` coalition values.
    pub max_std_error: f64,
    pub mc_samples: usize,
    pub seed: Seed,
}

type ValueKey = (u64, Vec<u64>);

/// An engine bound to a model and distribution, with shared caches.
///
/// Observational estimates reuse one [`NoiseBank`] for every query, and
/// interventional estimates reuse one background sample, so values for
/// different subsets of the same point use common random numbers.
pub struct Expectations<'a> {
    engine: ExpectationEngine,
    model: &'a dyn Predictor,
    dist: &'a Distribution,
    affine: Option<AffineFunction>,
    noise: OnceLock<NoiseBank>,
    background: OnceLock<DMatrix<f64>>,
    values: RwLock<HashMap<ValueKey, Estimate>>,
    shapley: RwLock<HashMap<Vec<u64>, ShapleyVector>>,
}

fn key_bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

impl<'a> Expectations<'a> {
    pub fn new(engine: ExpectationEngine, model: &'a dyn Predictor, dist: &'a Distribution) -> Result<Self> {
        engine.validate()?;
        ensure_dim(dist.dim(), model.dim())?;
        let affine = match engine.estimator {
            Estimator::Auto => model.affine(),
            Estimator::MonteCarlo => None,
        };
        Ok(Expectations {
            engine,
            model,
            dist,
            affine,
            noise: OnceLock::new(),
            background: OnceLock::new(),
            values: RwLock::new(HashMap::new()),
            shapley: RwLock::new(HashMap::new()),
        })
    }

    pub fn engine(&self) -> &ExpectationEngine {
        &self.engine
    }

    pub fn mode(&self) -> ExpectationMode {
        self.engine.mode
    }

    pub fn model(&self) -> &'a dyn Predictor {
        self.model
    }

    pub fn dist(&self) -> &'a Distribution {
        self.dist
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    /// Whether expectations are evaluated in closed form.
    pub fn is_exact(&self) -> bool {
        self.affine.is_some()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.model.predict_one(x)
    }

    fn noise_bank(&self) -> &NoiseBank {
        self.noise.get_or_init(|| {
            NoiseBank::generate(
                self.engine.mc_samples,
                self.dim(),
                self.dist.max_trials(),
                self.engine.seed.derive(stream::NOISE),
            )
        })
    }

    /// Background rows drawn from the joint for interventional estimates.
    pub fn background(&self) -> &DMatrix<f64> {
        self.background
            .get_or_init(|| self.dist.sample(self.engine.mc_samples, self.engine.seed.derive(stream::BACKGROUND)))
    }

    /// `E[f(x') | x'_S = x_S]` in the engine's mode. `S = F` returns `f(x)`.
    pub fn value(&self, x: &[f64], set: FeatureSet) -> Result<Estimate> {
        ensure_dim(self.dim(), x.len())?;
        let d = self.dim();
        if set == FeatureSet::full(d) {
            return Ok(Estimate::exact(self.predict(x)));
        }
        let query = ConditionalQuery::from_point(x, set);
        if !self.engine.cache {
            return self.compute(x, set, &query);
        }
        let key = (set.bits(), key_bits(&query.fixed_values));
        if let Some(hit) = self.values.read().expect("value cache poisoned").get(&key) {
            return Ok(*hit);
        }
        let est = self.compute(x, set, &query)?;
        self.values.write().expect("value cache poisoned").entry(key).or_insert(est);
        Ok(est)
    }

    fn compute(&self, x: &[f64], set: FeatureSet, query: &ConditionalQuery) -> Result<Estimate> {
        let d = self.dim();
        if let Some(affine) = &self.affine {
            let point = match self.engine.mode {
                ExpectationMode::Observational => self.dist.conditional_point(query)?,
                ExpectationMode::Interventional => {
                    let mean = self.dist.mean();
                    (0..d).map(|i| if set.contains(i) { x[i] } else { mean[i] }).collect()
                }
            };
            return Ok(Estimate::exact(affine.eval(&point)));
        }
        let rows = match self.engine.mode {
            ExpectationMode::Observational => {
                let cond = self.dist.condition(query)?;
                let free = query.free_indices(d);
                let samples = cond.sample_from_noise(self.noise_bank(), &free);
                let mut rows = DMatrix::zeros(samples.nrows(), d);
                for (k, &j) in free.iter().enumerate() {
                    rows.set_column(j, &samples.column(k));
                }
                for i in set.iter() {
                    rows.column_mut(i).fill(x[i]);
                }
                rows
            }
            ExpectationMode::Interventional => {
                let mut rows = self.background().clone();
                for i in set.iter() {
                    rows.column_mut(i).fill(x[i]);
                }
                rows
            }
        };
        Ok(summarize(&self.model.predict_batch(&rows)))
    }

    /// Exact Shapley values by enumerating all `2^D` coalitions.
    pub fn shapley(&self, x: &[f64]) -> Result<ShapleyVector> {
        ensure_dim(self.dim(), x.len())?;
        let d = self.dim();
        if d > MAX_SHAPLEY_DIM {
            return Err(Error::Refused(format!(
                "exact Shapley enumerates 2^D coalitions and is limited to D <= {MAX_SHAPLEY_DIM}; got D = {d}. \
                 Reduce the dimension or use kernel_shap"
            )));
        }
        let key = key_bits(x);
        if self.engine.cache {
            if let Some(hit) = self.shapley.read().expect("shapley cache poisoned").get(&key) {
                return Ok(hit.clone());
            }
        }
        let n_sets = 1usize << d;
        let mut v = Vec::with_capacity(n_sets);
        let mut max_se = 0.0_f64;
        for bits in 0..n_sets as u64 {
            let est = self.value(x, FeatureSet::from_bits(bits))?;
            max_se = max_se.max(est.std_error);
            v.push(est.mean);
        }
        let weights = shapley_weights(d);
        let mut values = vec![0.0; d];
        for (i, phi) in values.iter_mut().enumerate() {
            let bit = 1u64 << i;
            for s in 0..n_sets as u64 {
                if s & bit == 0 {
                    *phi += weights[s.count_ones() as usize] * (v[(s | bit) as usize] - v[s as usize]);
                }
            }
        }
        let baseline = v[0];
        let total = v[n_sets - 1] - baseline;
        let efficiency_residual = (values.iter().sum::<f64>() - total).abs();
        let sv = ShapleyVector {
            values,
            total,
            baseline,
            efficiency_residual,
            max_std_error: max_se,
            mc_samples: self.engine.mc_samples,
            seed: self.engine.seed,
        };
        if self.engine.cache {
            self.shapley.write().expect("shapley cache poisoned").entry(key).or_insert_with(|| sv.clone());
        }
        Ok(sv)
    }

    pub fn cached_values(&self) -> usize {
        self.values.read().expect("value cache poisoned").len()
    }
}

/// `|S|! (D - |S| - 1)! / D!` indexed by `|S|`.
pub fn shapley_weights(d: usize) -> Vec<f64> {
    (0..d)
        .map(|s| {
            // Computed as 1 / (D * C(D-1, s)) to stay exact for moderate D.
            let mut binom = 1.0;
            for k in 0..s {
                binom = binom * (d - 1 - k) as f64 / (k + 1) as f64;
            }
            1.0 / (d as f64 * binom)
        })
        .collect()
}

fn summarize(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate { mean, std_error: (var / n).sqrt() }
}
