//! Native feature-attribution explainers.

mod kernel_shap;
mod lime;

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use kernel_shap::kernel_shap;
pub use lime::{LimeRepresentation, LimeState};

use crate::distributions::Distribution;
use crate::error::{ensure_dim, Error, Result};
use crate::labelers::fmt_f64;
use crate::linalg::row_vec;
use crate::metrics::{Estimator, ExpectationEngine, ExpectationMode, Expectations};
use crate::models::Predictor;
use crate::par::{self, Parallelism};
use crate::rng::{stream, Seed};
use crate::subset::FeatureSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerId {
    Random,
    ExactShapley,
    KernelShap,
    Lime,
    Breakdown,
}

impl ExplainerId {
    pub const ALL: [ExplainerId; 5] = [
        ExplainerId::Random,
        ExplainerId::ExactShapley,
        ExplainerId::KernelShap,
        ExplainerId::Lime,
        ExplainerId::Breakdown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExplainerId::Random => "random",
            ExplainerId::ExactShapley => "exact_shapley",
            ExplainerId::KernelShap => "kernel_shap",
            ExplainerId::Lime => "lime",
            ExplainerId::Breakdown => "breakdown",
        }
    }
}

impl std::str::FromStr for ExplainerId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExplainerId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown explainer '{s}'")))
    }
}

/// Weights `w` for one datapoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub explainer: String,
    pub datapoint_index: usize,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

impl Attribution {
    pub fn new(explainer: impl Into<String>, datapoint_index: usize, weights: Vec<f64>) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("attribution weight {bad} is not finite")));
        }
        Ok(Attribution { explainer: explainer.into(), datapoint_index, weights, baseline: None })
    }

    pub fn with_baseline(mut self, baseline: f64) -> Self {
        self.baseline = Some(baseline);
        self
    }
}

/// Writes `datapoint_index,feature_index,weight` rows.
pub fn write_attributions_csv(path: &Path, batch: &[Attribution]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["datapoint_index", "feature_index", "weight"])?;
    for a in batch {
        for (j, v) in a.weights.iter().enumerate() {
            w.write_record([a.datapoint_index.to_string(), j.to_string(), fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_attributions_json(path: &Path, batch: &[Attribution]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, batch)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub id: ExplainerId,
    pub mode: ExpectationMode,
    pub mc_samples: usize,
    /// Kernel SHAP enumerates all coalitions when `2^D - 2` fits this budget.
    pub coalition_samples: usize,
    pub perturbation_count: usize,
    /// LIME kernel width; `0.75 * sqrt(D)` when absent.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    pub lime_representation: LimeRepresentation,
    pub estimator: Estimator,
    pub seed: Seed,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            id: ExplainerId::Random,
            mode: ExpectationMode::Interventional,
            mc_samples: 1000,
            coalition_samples: 2048,
            perturbation_count: 5000,
            kernel_width: None,
            ridge: 1e-3,
            lime_representation: LimeRepresentation::Quartile,
            estimator: Estimator::Auto,
            seed: Seed(0),
        }
    }
}

impl ExplainerConfig {
    pub fn new(id: ExplainerId, seed: Seed) -> Self {
        ExplainerConfig { id, seed, ..Default::default() }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.mc_samples == 0 || self.coalition_samples == 0 || self.perturbation_count == 0 {
            return Err(Error::InvalidParameter("explainer sample counts must be at least 1".into()));
        }
        if let Some(kw) = self.kernel_width {
            if !(kw > 0.0 && kw.is_finite()) {
                return Err(Error::InvalidParameter(format!("kernel width {kw} must be positive")));
            }
        }
        if self.id == ExplainerId::Lime && self.perturbation_count < 10 * dim {
            return Err(Error::InvalidParameter(format!(
                "lime needs at least 10*D = {} perturbations, got {}",
                10 * dim,
                self.perturbation_count
            )));
        }
        if self.id == ExplainerId::KernelShap && dim > 1 {
            let full = (1u128 << dim.min(127)) - 2;
            if full > self.coalition_samples as u128 && self.coalition_samples < dim + 2 {
                return Err(Error::InvalidParameter(format!(
                    "kernel_shap needs at least D+2 = {} coalition samples",
                    dim + 2
                )));
            }
        }
        Ok(())
    }

    pub fn kernel_width(&self, dim: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (dim as f64).sqrt())
    }

    /// The engine used for this explainer's own expectations.
    pub fn engine(&self) -> ExpectationEngine {
        ExpectationEngine {
            mode: self.mode,
            mc_samples: self.mc_samples,
            seed: self.seed.derive(stream::EXPLAINER),
            estimator: self.estimator,
            cache: true,
        }
    }

    fn point_seed(&self, tag: u64, index: usize) -> Seed {
        self.seed.derive(tag).derive(index as u64)
    }
}

enum Context<'a> {
    None,
    Owned(Box<Expectations<'a>>),
    Shared(&'a Expectations<'a>),
}

/// An explainer bound to a model and distribution, ready to explain points.
pub struct Explainer<'a> {
    cfg: ExplainerConfig,
    model: &'a dyn Predictor,
    dist: &'a Distribution,
    ctx: Context<'a>,
    lime: Option<LimeState>,
}

impl<'a> Explainer<'a> {
    pub fn new(cfg: ExplainerConfig, model: &'a dyn Predictor, dist: &'a Distribution) -> Result<Self> {
        let d = dist.dim();
        ensure_dim(d, model.dim())?;
        cfg.validate(d)?;
        let ctx = match cfg.id {
            ExplainerId::ExactShapley | ExplainerId::KernelShap | ExplainerId::Breakdown => {
                Context::Owned(Box::new(cfg.engine().bind(model, dist)?))
            }
            _ => Context::None,
        };
        let lime = (cfg.id == ExplainerId::Lime).then(|| LimeState::new(&cfg, dist));
        Ok(Explainer { cfg, model, dist, ctx, lime })
    }

    /// Uses an existing expectation context (and its caches) instead of
    /// building one. The context's engine replaces the config's mode and
    /// sample count.
    pub fn with_context(cfg: ExplainerConfig, ctx: &'a Expectations<'a>) -> Result<Self> {
        let mut e = Explainer::new(ExplainerConfig { id: ExplainerId::Random, ..cfg }, ctx.model(), ctx.dist())?;
        e.cfg = ExplainerConfig { mode: ctx.mode(), mc_samples: ctx.engine().mc_samples, ..cfg };
        e.cfg.validate(ctx.dim())?;
        e.ctx = Context::Shared(ctx);
        e.lime = (cfg.id == ExplainerId::Lime).then(|| LimeState::new(&cfg, ctx.dist()));
        Ok(e)
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.cfg
    }

    fn context(&self) -> &Expectations<'a> {
        match &self.ctx {
            Context::Owned(c) => c,
            Context::Shared(c) => c,
            Context::None => unreachable!("explainer has no expectation context"),
        }
    }

    pub fn explain(&self, x: &[f64], index: usize) -> Result<Attribution> {
        let d = self.dist.dim();
        ensure_dim(d, x.len())?;
        let name = self.cfg.id.as_str();
        match self.cfg.id {
            ExplainerId::Random => {
                let mut rng = self.cfg.point_seed(stream::EXPLAINER, index).rng();
                let w = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                Attribution::new(name, index, w)
            }
            ExplainerId::ExactShapley => {
                let sv = self.context().shapley(x)?;
                Ok(Attribution::new(name, index, sv.values)?.with_baseline(sv.baseline))
            }
            ExplainerId::KernelShap => {
                let seed = self.cfg.point_seed(stream::COALITION, index);
                let (w, base) = kernel_shap(self.context(), x, self.cfg.coalition_samples, seed)?;
                Ok(Attribution::new(name, index, w)?.with_baseline(base))
            }
            ExplainerId::Lime => {
                let seed = self.cfg.point_seed(stream::PERTURBATION, index);
                let state = self.lime.as_ref().expect("lime state");
                let (w, intercept) = state.explain(&self.cfg, self.model, x, seed)?;
                Ok(Attribution::new(name, index, w)?.with_baseline(intercept))
            }
            ExplainerId::Breakdown => {
                let (w, base) = breakdown(self.context(), x)?;
                Ok(Attribution::new(name, index, w)?.with_baseline(base))
            }
        }
    }

    /// Explains every row of `points`; row `r` gets datapoint index `r`.
    pub fn explain_batch(&self, points: &DMatrix<f64>, par: Parallelism) -> Result<Vec<Attribution>> {
        par::map_indexed(par, points.nrows(), |r| self.explain(&row_vec(points, r), r)).into_iter().collect()
    }
}

/// Greedy breakdown: repeatedly fixes the feature whose addition moves the
/// expected output the most, crediting it with that change. Returns the
/// contributions and `E[f]`.
pub fn breakdown(ctx: &Expectations, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let d = ctx.dim();
    let mut fixed = FeatureSet::empty();
    let base = ctx.value(x, fixed)?.mean;
    let mut current = base;
    let mut w = vec![0.0; d];
    for _ in 0..d {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..d).filter(|&j| !fixed.contains(j)) {
            let v = ctx.value(x, fixed.with(j))?.mean;
            if best.is_none_or(|(_, bv)| (v - current).abs() > (bv - current).abs()) {
                best = Some((j, v));
            }
        }
        let (j, v) = best.expect("at least one free feature");
        w[j] = v - current;
        current = v;
        fixed = fixed.with(j);
    }
    Ok((w, base))
}

/// Explains `points` with a freshly bound explainer.
pub fn explain_batch(
    cfg: &ExplainerConfig,
    model: &dyn Predictor,
    dist: &Distribution,
    points: &DMatrix<f64>,
    par: Parallelism,
) -> Result<Vec<Attribution>> {
    Explainer::new(*cfg, model, dist)?.explain_batch(points, par)
}
