//! Evaluation metrics for attributions.
//!
//! Every expectation goes through an [`Expectations`] context, so metrics
//! share cached coalition values: the `F \ {i}` sets used by faithfulness and
//! the top-k sets used by monotonicity are all among the `2^D` coalitions that
//! ground-truth Shapley enumerates.

mod engine;
mod roar;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use engine::{
    shapley_weights, Estimate, Estimator, ExpectationEngine, ExpectationMode, Expectations, ShapleyVector,
    MAX_SHAPLEY_DIM, MIN_MC_SAMPLES,
};
pub use roar::{ablate, roar, RoarConfig, RoarOutcome};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::row_vec;
use crate::par::{self, Parallelism};
use crate::rng::stream;
use crate::subset::FeatureSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Faithfulness,
    Monotonicity,
    GtShapley,
    Infidelity,
    Roar,
}

impl MetricId {
    pub const ALL: [MetricId; 5] =
        [MetricId::Faithfulness, MetricId::Monotonicity, MetricId::GtShapley, MetricId::Infidelity, MetricId::Roar];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Faithfulness => "faithfulness",
            MetricId::Monotonicity => "monotonicity",
            MetricId::GtShapley => "gt_shapley",
            MetricId::Infidelity => "infidelity",
            MetricId::Roar => "roar",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            MetricId::Infidelity => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }
}

impl std::str::FromStr for MetricId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Which ablation effect faithfulness correlates with the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaithfulnessVariant {
    /// `f(x) - E[f | x_{F\i}]`.
    #[default]
    Signed,
    /// `|E[f | x_{F\i}] - f(x)|`.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub faithfulness: FaithfulnessVariant,
    /// Infidelity noise scale in units of each feature's marginal std.
    pub infidelity_sigma: f64,
    /// Per-retrain MSE clip used to normalize the ROAR area.
    pub roar_clip: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { faithfulness: FaithfulnessVariant::Signed, infidelity_sigma: 0.1, roar_clip: 2.0 }
    }
}

/// Feature indices by descending `|w|`, ties by ascending index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub ordering: Vec<usize>,
}

impl ImportanceRanking {
    pub fn from_weights(w: &[f64]) -> Self {
        let mut ordering: Vec<usize> = (0..w.len()).collect();
        ordering.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
        ImportanceRanking { ordering }
    }

    /// The `k` most important features.
    pub fn top(&self, k: usize) -> FeatureSet {
        FeatureSet::from_indices(&self.ordering[..k])
    }
}

/// Pearson correlation, or `None` when either vector is (numerically) constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return None;
    }
    let centered = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        let c: Vec<f64> = v.iter().map(|x| x - m).collect();
        let ss: f64 = c.iter().map(|x| x * x).sum();
        let scale = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        (c, ss, scale)
    };
    let (ca, ssa, sa) = centered(a);
    let (cb, ssb, sb) = centered(b);
    let flat = |ss: f64, scale: f64| ss <= (1e-12 * scale).powi(2) * n as f64;
    if flat(ssa, sa) || flat(ssb, sb) {
        return None;
    }
    let cov: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    Some((cov / (ssa.sqrt() * ssb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-feature ablation effects used by faithfulness.
pub fn ablation_deltas(ctx: &Expectations, x: &[f64], variant: FaithfulnessVariant) -> Result<Vec<f64>> {
    let d = ctx.dim();
    let fx = ctx.predict(x);
    let full = FeatureSet::full(d);
    (0..d)
        .map(|i| {
            let e = ctx.value(x, full.without(i))?.mean;
            Ok(match variant {
                FaithfulnessVariant::Signed => fx - e,
                FaithfulnessVariant::Absolute => (e - fx).abs(),
            })
        })
        .collect()
}

pub fn faithfulness(ctx: &Expectations, x: &[f64], w: &[f64], variant: FaithfulnessVariant) -> Result<Option<f64>> {
    ensure_dim(ctx.dim(), w.len())?;
    if ctx.dim() < 2 {
        return Err(Error::InvalidParameter("faithfulness needs at least 2 features".into()));
    }
    Ok(pearson(&ablation_deltas(ctx, x, variant)?, w))
}

/// Fraction of adjacent pairs with `|δ_i| <= |δ_{i+1}|`, plus the deltas
/// `δ_i = E[f | top-(i+1)] - E[f | top-i]` for `i = 0..D-1`.
pub fn monotonicity(ctx: &Expectations, x: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure_dim(ctx.dim(), w.len())?;
    let d = ctx.dim();
    if d < 2 {
        return Err(Error::InvalidParameter("monotonicity needs at least 2 features".into()));
    }
    let ranking = ImportanceRanking::from_weights(w);
    let values: Vec<f64> = (0..=d).map(|k| ctx.value(x, ranking.top(k)).map(|e| e.mean)).collect::<Result<_>>()?;
    let deltas: Vec<f64> = values.windows(2).map(|p| p[1] - p[0]).collect();
    let hits = deltas.windows(2).filter(|p| p[0].abs() <= p[1].abs()).count();
    Ok((hits as f64 / (d - 1) as f64, deltas))
}

pub fn gt_shapley(ctx: &Expectations, x: &[f64], w: &[f64]) -> Result<Option<f64>> {
    ensure_dim(ctx.dim(), w.len())?;
    Ok(pearson(w, &ctx.shapley(x)?.values))
}

/// `E_I[(Iᵀw - (f(x) - f(x - I)))²]` with `I ~ N(0, σ² diag(Var x))`.
pub fn infidelity(ctx: &Expectations, x: &[f64], w: &[f64], sigma: f64) -> Result<f64> {
    ensure_dim(ctx.dim(), w.len())?;
    ensure_dim(ctx.dim(), x.len())?;
    let d = ctx.dim();
    let n = ctx.engine().mc_samples;
    let scale: Vec<f64> = ctx.dist().marginal_variances().iter().map(|v| sigma * v.sqrt()).collect();
    let mut rng = ctx.engine().seed.derive(stream::PERTURBATION).derive_floats(x).rng();
    let noise = DMatrix::from_fn(n, d, |_, j| scale[j] * rng.sample::<f64, _>(StandardNormal));
    let shifted = DMatrix::from_fn(n, d, |r, j| x[j] - noise[(r, j)]);
    let fx = ctx.predict(x);
    let preds = ctx.model().predict_batch(&shifted);
    let total: f64 = (0..n)
        .map(|r| {
            let dot: f64 = (0..d).map(|j| noise[(r, j)] * w[j]).sum();
            (dot - (fx - preds[r])).powi(2)
        })
        .sum();
    Ok(total / n as f64)
}

/// Per-point values with trial-level summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: MetricId,
    pub per_point: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_missing: usize,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<Vec<f64>>,
}

impl MetricResult {
    pub fn from_points(metric: MetricId, per_point: Vec<Option<f64>>, trace: Vec<Vec<f64>>) -> Self {
        let present: Vec<f64> = per_point.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&present);
        MetricResult {
            metric,
            n_missing: per_point.len() - present.len(),
            per_point,
            mean,
            std,
            direction: metric.direction(),
            trace,
        }
    }
}

/// Mean and sample standard deviation; `None` for an empty input.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Scores a per-point metric on every row of `points`.
pub fn evaluate_points(
    metric: MetricId,
    ctx: &Expectations,
    points: &DMatrix<f64>,
    weights: &[Vec<f64>],
    opts: &MetricOptions,
    par: Parallelism,
) -> Result<MetricResult> {
    if weights.len() != points.nrows() {
        return Err(Error::Misaligned(format!("{} points but {} attributions", points.nrows(), weights.len())));
    }
    if metric == MetricId::Roar {
        return Err(Error::InvalidParameter("roar is a dataset-level metric; use metrics::roar".into()));
    }
    let outcomes: Vec<Result<(Option<f64>, Vec<f64>)>> = par::map_indexed(par, points.nrows(), |r| {
        let x = row_vec(points, r);
        let w = &weights[r];
        match metric {
            MetricId::Faithfulness => faithfulness(ctx, &x, w, opts.faithfulness).map(|v| (v, vec![])),
            MetricId::Monotonicity => monotonicity(ctx, &x, w).map(|(v, t)| (Some(v), t)),
            MetricId::GtShapley => gt_shapley(ctx, &x, w).map(|v| (v, vec![])),
            MetricId::Infidelity => infidelity(ctx, &x, w, opts.infidelity_sigma).map(|v| (Some(v), vec![])),
            MetricId::Roar => unreachable!(),
        }
    });
    let mut per_point = Vec::with_capacity(outcomes.len());
    let mut trace = Vec::new();
    for o in outcomes {
        let (v, t) = o?;
        per_point.push(v);
        if !t.is_empty() {
            trace.push(t);
        }
    }
    Ok(MetricResult::from_points(metric, per_point, trace))
}
