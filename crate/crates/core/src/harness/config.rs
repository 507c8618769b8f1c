use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::BridgeCommand;
use crate::error::{Error, Result};
use crate::explainers::{ExplainerConfig, ExplainerId};
use crate::labelers::{LabelKind, DEFAULT_NORMALIZATION_SAMPLES, MIN_NORMALIZATION_SAMPLES};
use crate::metrics::{ExpectationMode, MetricId, MetricOptions, MIN_MC_SAMPLES};
use crate::models::ModelSpec;
use crate::simulation::SimulationOptions;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFamily {
    /// Zero-mean equicorrelated Gaussian.
    #[default]
    Gaussian,
    /// Equal-weight pair of equicorrelated Gaussians centred at `±separation·1`.
    Mixture,
    /// Uniform multinomial counts; `rho` is ignored.
    Multinomial,
    /// Gaussian twin of a real CSV; `rho`, `label` and `dim` are ignored.
    Simulated,
}

impl DatasetFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetFamily::Gaussian => "gaussian",
            DatasetFamily::Mixture => "mixture",
            DatasetFamily::Multinomial => "multinomial",
            DatasetFamily::Simulated => "simulated",
        }
    }
}

impl std::str::FromStr for DatasetFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [DatasetFamily::Gaussian, DatasetFamily::Mixture, DatasetFamily::Multinomial, DatasetFamily::Simulated]
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown dataset family '{s}'")))
    }
}

/// Explainers run out of process through the bridge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeSettings {
    pub command: BridgeCommand,
    pub explainers: Vec<String>,
    /// Passed through verbatim in each explain request.
    #[serde(default)]
    pub config: serde_json::Value,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetFamily,
    pub label: LabelKind,
    pub dim: usize,
    #[serde(deserialize_with = "one_or_many")]
    pub rho: Vec<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub normalization_samples: usize,
    pub mixture_separation: f64,
    pub multinomial_trials: u64,
    pub real_csv: Option<PathBuf>,
    pub simulation: SimulationOptions,
    pub model: ModelSpec,
    /// The random baseline is always run, listed or not.
    pub explainers: Vec<ExplainerId>,
    /// Shared explainer settings; `id` and `seed` are set per cell.
    pub explainer_options: ExplainerConfig,
    pub bridge: Option<BridgeSettings>,
    pub metrics: Vec<MetricId>,
    /// Expectation mode of the metrics (and of the exact Shapley explainer,
    /// which shares the metric context).
    pub mode: ExpectationMode,
    pub mc_samples: usize,
    pub metric_options: MetricOptions,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Record wall-clock seconds per cell in the summary CSV.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetFamily::Gaussian,
            label: LabelKind::Linear,
            dim: 5,
            rho: vec![0.0],
            train_size: 1000,
            test_size: 100,
            normalization_samples: DEFAULT_NORMALIZATION_SAMPLES,
            mixture_separation: 1.0,
            multinomial_trials: 10,
            real_csv: None,
            simulation: SimulationOptions::default(),
            model: ModelSpec::default(),
            explainers: ExplainerId::ALL.to_vec(),
            explainer_options: ExplainerConfig::default(),
            bridge: None,
            metrics: vec![MetricId::Faithfulness, MetricId::Monotonicity, MetricId::GtShapley, MetricId::Infidelity],
            mode: ExpectationMode::Observational,
            mc_samples: 1000,
            metric_options: MetricOptions::default(),
            trials: 10,
            seed: 0,
            out: None,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Explainer list with the random baseline first and duplicates removed.
    pub fn explainer_list(&self) -> Vec<ExplainerId> {
        let mut out = vec![ExplainerId::Random];
        for e in &self.explainers {
            if !out.contains(e) {
                out.push(*e);
            }
        }
        out
    }

    pub fn metric_list(&self) -> Vec<MetricId> {
        let mut out: Vec<MetricId> = Vec::new();
        for m in &self.metrics {
            if !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.dim == 0 && self.dataset != DatasetFamily::Simulated {
            return bad("dim must be at least 1".into());
        }
        if self.rho.is_empty() {
            return bad("rho list is empty".into());
        }
        if self.train_size < 2 || self.test_size == 0 {
            return bad("train_size must be at least 2 and test_size at least 1".into());
        }
        if self.normalization_samples < MIN_NORMALIZATION_SAMPLES {
            return bad(format!("normalization_samples must be at least {MIN_NORMALIZATION_SAMPLES}"));
        }
        if self.mc_samples < MIN_MC_SAMPLES {
            return bad(format!("mc_samples must be at least {MIN_MC_SAMPLES}"));
        }
        if self.metrics.is_empty() {
            return bad("metric list is empty".into());
        }
        if !(self.metric_options.infidelity_sigma > 0.0) || !(self.metric_options.roar_clip > 0.0) {
            return bad("infidelity_sigma and roar_clip must be positive".into());
        }
        if self.dataset == DatasetFamily::Simulated && self.real_csv.is_none() {
            return bad("the simulated dataset family needs real_csv".into());
        }
        if self.dataset == DatasetFamily::Multinomial && self.multinomial_trials == 0 {
            return bad("multinomial_trials must be at least 1".into());
        }
        if let Some(b) = &self.bridge {
            if b.explainers.iter().any(|e| e.trim().is_empty()) {
                return bad("bridge explainer names must be nonempty".into());
            }
        }
        self.model.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring output settings.
    pub fn fingerprint(&self) -> Result<String> {
        let canonical = ExperimentConfig { out: None, timing: false, ..self.clone() };
        let digest = Sha256::digest(serde_json::to_vec(&canonical)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
