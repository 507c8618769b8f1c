//! Remove-and-retrain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ExpectationMode, ImportanceRanking};
use crate::distributions::{ConditionalQuery, Distribution};
use crate::error::{Error, Result};
use crate::labelers::Dataset;
use crate::linalg::row_vec;
use crate::models::{mse, ModelSpec, Predictor};
use crate::par::{self, Parallelism};
use crate::rng::Seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoarConfig {
    pub mode: ExpectationMode,
    /// Per-retrain test MSE is clipped at this value before normalizing.
    pub clip: f64,
    pub seed: Seed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoarOutcome {
    /// `(1/D) Σ_{k=1..D} min(e_k, clip) / clip`.
    pub auc: f64,
    /// Test MSE `e_k` after removing the top-k features, `k = 0..=D`.
    pub curve: Vec<f64>,
    pub retrains: usize,
}

/// Replaces each row's `k` most important features by their expectation
/// given the remaining ones (observational) or by their marginal mean
/// (interventional).
pub fn ablate(
    features: &DMatrix<f64>,
    weights: &[Vec<f64>],
    k: usize,
    dist: &Distribution,
    mode: ExpectationMode,
) -> Result<DMatrix<f64>> {
    let d = features.ncols();
    if weights.len() != features.nrows() {
        return Err(Error::Misaligned(format!("{} rows but {} attributions", features.nrows(), weights.len())));
    }
    let mean = dist.mean();
    let mut out = features.clone();
    for (r, w) in weights.iter().enumerate() {
        let removed = ImportanceRanking::from_weights(w).top(k);
        if removed.is_empty() {
            continue;
        }
        let x = row_vec(features, r);
        let filled = match mode {
            ExpectationMode::Observational => {
                dist.conditional_point(&ConditionalQuery::from_point(&x, removed.complement(d)))?
            }
            ExpectationMode::Interventional => mean.as_slice().to_vec(),
        };
        for i in removed.iter() {
            out[(r, i)] = filled[i];
        }
    }
    Ok(out)
}

/// Retrains `spec` on ablated training sets for `k = 0..=D` and scores each
/// retrained model on the correspondingly ablated test set.
pub fn roar(
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    train_weights: &[Vec<f64>],
    test_weights: &[Vec<f64>],
    cfg: &RoarConfig,
    par: Parallelism,
) -> Result<RoarOutcome> {
    let d = train.dim();
    if !(cfg.clip > 0.0) {
        return Err(Error::InvalidParameter("roar clip must be positive".into()));
    }
    let curve: Vec<Result<f64>> = par::map_indexed(par, d + 1, |k| {
        let run = || -> Result<f64> {
            let xtr = ablate(&train.features, train_weights, k, &train.distribution, cfg.mode)?;
            let xte = ablate(&test.features, test_weights, k, &test.distribution, cfg.mode)?;
            let model = spec.fit(&xtr, &train.labels, cfg.seed)?;
            Ok(mse(&model.predict_batch(&xte), &test.labels))
        };
        run().map_err(|e| Error::Retrain { k, source: Box::new(e) })
    });
    let curve: Vec<f64> = curve.into_iter().collect::<Result<_>>()?;
    let auc = curve[1..].iter().map(|e| e.min(cfg.clip) / cfg.clip).sum::<f64>() / d as f64;
    Ok(RoarOutcome { auc, curve, retrains: d + 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelers::{fit_normalization, generate_dataset, LabelFunction, LabelKind, Labeler};
    use crate::models::LinearSpec;
    use crate::rng::stream;
    use std::sync::Arc;

    fn datasets(rho: f64, seed: Seed) -> (Dataset, Dataset) {
        let dist = Arc::new(Distribution::equicorrelated_gaussian(5, rho).unwrap());
        let lab: Arc<Labeler> = Arc::new(LabelFunction::new(LabelKind::Linear, 5).unwrap().into());
        let stats = fit_normalization(&lab, &dist, 10_000, seed, Parallelism::Sequential).unwrap();
        let train = generate_dataset(dist.clone(), lab.clone(), 1000, stats, seed.derive(stream::TRAIN), Parallelism::Sequential).unwrap();
        let test = generate_dataset(dist, lab, 100, stats, seed.derive(stream::TEST), Parallelism::Sequential).unwrap();
        (train, test)
    }

    #[test]
    fn ablating_everything_gives_the_mean() {
        let dist = Distribution::equicorrelated_gaussian(3, 0.5).unwrap();
        let x = dist.sample(4, Seed(1));
        let w = vec![vec![1.0, 2.0, 3.0]; 4];
        let a = ablate(&x, &w, 3, &dist, ExpectationMode::Observational).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
        let none = ablate(&x, &w, 0, &dist, ExpectationMode::Observational).unwrap();
        assert_eq!(none, x);
    }

    #[test]
    fn ablation_uses_conditional_mean() {
        let dist = Distribution::equicorrelated_gaussian(2, 0.5).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[2.0, 1.0]);
        let a = ablate(&x, &[vec![0.0, 1.0]], 1, &dist, ExpectationMode::Observational).unwrap();
        assert_eq!(a[(0, 0)], 2.0);
        assert!((a[(0, 1)] - 1.0).abs() < 1e-15);
        let b = ablate(&x, &[vec![0.0, 1.0]], 1, &dist, ExpectationMode::Interventional).unwrap();
        assert_eq!(b[(0, 1)], 0.0);
    }

    #[test]
    fn structure_and_k_zero_baseline() {
        let (train, test) = datasets(0.0, Seed(3));
        let spec = ModelSpec::Linear(LinearSpec::default());
        let w: Vec<Vec<f64>> = vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]; 1000];
        let wt: Vec<Vec<f64>> = vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]; 100];
        let cfg = RoarConfig { mode: ExpectationMode::Observational, clip: 2.0, seed: Seed(0) };
        let out = roar(&spec, &train, &test, &w, &wt, &cfg, Parallelism::Parallel).unwrap();
        assert_eq!(out.retrains, 6);
        assert_eq!(out.curve.len(), 6);
        let base = spec.fit(&train.features, &train.labels, Seed(0)).unwrap();
        assert_eq!(out.curve[0], mse(&base.predict_batch(&test.features), &test.labels));
        assert!(out.curve[5] > 0.5);
    }

    #[test]
    fn oracle_weights_degrade_faster_than_uninformative() {
        let (train, test) = datasets(0.0, Seed(4));
        let spec = ModelSpec::Linear(LinearSpec::default());
        let oracle = |n: usize| vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]; n];
        let zeros = |n: usize| vec![vec![0.0; 5]; n];
        let cfg = RoarConfig { mode: ExpectationMode::Observational, clip: 2.0, seed: Seed(0) };
        let good = roar(&spec, &train, &test, &oracle(1000), &oracle(100), &cfg, Parallelism::Sequential).unwrap();
        let flat = roar(&spec, &train, &test, &zeros(1000), &zeros(100), &cfg, Parallelism::Sequential).unwrap();
        assert!(good.auc > flat.auc, "{} vs {}", good.auc, flat.auc);
    }
}
