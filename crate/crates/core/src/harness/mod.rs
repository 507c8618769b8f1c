//! Experiment configuration, execution and result files.

mod config;
mod output;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{BridgeSettings, DatasetFamily, ExperimentConfig};
pub use output::{emit_results, write_plot_csv, write_summary_csv, OutputFormat};

use crate::bridge::host_invoke_bridge;
use crate::distributions::{equicorrelation_sigma, Distribution, GaussianSpec, MixtureComponent, MixtureSpec, MultinomialSpec};
use crate::error::{Error, Result};
use crate::explainers::{Attribution, Explainer, ExplainerConfig, ExplainerId};
use crate::labelers::{fit_normalization, generate_dataset, Dataset, LabelFunction, Labeler, NormalizationStats};
use crate::metrics::{
    evaluate_points, roar, Estimator, ExpectationEngine, ExpectationMode, MetricId, MetricResult, RoarConfig,
};
use crate::models::{mse, Predictor, TrainedModel};
use crate::par::{self, Parallelism};
use crate::rng::{stream, Seed};
use crate::simulation::{RealDataset, Simulation};

/// One trial of one (rho, explainer, metric) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: Seed,
    pub result: Option<MetricResult>,
    pub error: Option<String>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub label_kind: String,
    pub rho: f64,
    pub model: String,
    pub explainer: String,
    pub metric: MetricId,
    pub mode: ExpectationMode,
    /// Mean of the per-trial means.
    pub mean: Option<f64>,
    /// Sample standard deviation of the per-trial means.
    pub std: Option<f64>,
    /// Missing per-point values across trials; a failed trial counts every
    /// test point as missing.
    pub n_missing: usize,
    pub failed_trials: usize,
    pub seconds: Option<f64>,
    pub trials: Vec<TrialOutcome>,
}

/// Dataset and model diagnostics for one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialInfo {
    pub rho: f64,
    pub trial: usize,
    pub seed: Seed,
    pub test_label_mean: Option<f64>,
    pub test_label_std: Option<f64>,
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub setup: f64,
    pub generate: f64,
    pub train: f64,
    pub explain: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fingerprint: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub trial_info: Vec<TrialInfo>,
    /// Summed over trials; only recorded when timing is enabled.
    pub stage_seconds: Option<StageSeconds>,
}

impl RunResult {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().map(|c| c.failed_trials).sum()
    }

    /// 0 on full success, 2 when any cell failed in any trial.
    pub fn exit_code(&self) -> i32 {
        if self.failed_cells() == 0 {
            0
        } else {
            2
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn cell(&self, rho: f64, explainer: &str, metric: MetricId) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.rho == rho && c.explainer == explainer && c.metric == metric)
    }
}

/// Shared inputs for every trial at one rho.
struct Setup {
    dist: Arc<Distribution>,
    labeler: Arc<Labeler>,
    stats: NormalizationStats,
}

fn mixture(dim: usize, rho: f64, separation: f64) -> Result<Distribution> {
    let sigma = equicorrelation_sigma(dim, rho)?;
    let comps = [-separation, separation]
        .into_iter()
        .map(|m| Ok(MixtureComponent { weight: 0.5, gaussian: GaussianSpec::new(vec![m; dim], sigma.clone())? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Distribution::Mixture(MixtureSpec::new(comps)?))
}

fn setup_for(cfg: &ExperimentConfig, rho: f64, sim: Option<&Simulation>, par: Parallelism) -> Result<Setup> {
    if let Some(sim) = sim {
        return Ok(Setup { dist: sim.distribution.clone(), labeler: sim.labeler.clone(), stats: sim.normalization });
    }
    let dist = match cfg.dataset {
        DatasetFamily::Gaussian => Distribution::equicorrelated_gaussian(cfg.dim, rho)?,
        DatasetFamily::Mixture => mixture(cfg.dim, rho, cfg.mixture_separation)?,
        DatasetFamily::Multinomial => Distribution::Multinomial(MultinomialSpec::uniform(cfg.multinomial_trials, cfg.dim)?),
        DatasetFamily::Simulated => unreachable!("simulated setups come from the fitted twin"),
    };
    let labeler = Labeler::from(LabelFunction::new(cfg.label, cfg.dim)?);
    let seed = Seed(cfg.seed).derive(stream::NORMALIZATION).derive_floats(&[rho]);
    let stats = fit_normalization(&labeler, &dist, cfg.normalization_samples, seed, par)?;
    Ok(Setup { dist: Arc::new(dist), labeler: Arc::new(labeler), stats })
}

fn explainer_seed(trial_seed: Seed, name: &str) -> Seed {
    name.bytes().fold(trial_seed.derive(stream::EXPLAINER), |s, b| s.derive(b as u64))
}

pub fn trial_seed(base: u64, trial: usize) -> Seed {
    Seed(base).derive(stream::TRIAL).derive(trial as u64)
}

struct Weights {
    test: Vec<Vec<f64>>,
    train: Option<Vec<Vec<f64>>>,
}

fn weights_of(batch: Vec<Attribution>) -> Vec<Vec<f64>> {
    batch.into_iter().map(|a| a.weights).collect()
}

struct TrialRun {
    info: TrialInfo,
    /// Per (explainer, metric) in list order.
    cells: Vec<TrialOutcome>,
    stages: StageSeconds,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn explain_native(
    cfg: &ExperimentConfig,
    id: ExplainerId,
    seed: Seed,
    model: &TrainedModel,
    ctx: &crate::metrics::Expectations,
    train: &Dataset,
    test: &Dataset,
    need_train: bool,
    par: Parallelism,
) -> Result<Weights> {
    let ecfg = ExplainerConfig { id, seed, ..cfg.explainer_options };
    let explainer = if id == ExplainerId::ExactShapley {
        Explainer::with_context(ecfg, ctx)?
    } else {
        Explainer::new(ecfg, model, &test.distribution)?
    };
    let test_w = weights_of(explainer.explain_batch(&test.features, par)?);
    let train_w = if need_train { Some(weights_of(explainer.explain_batch(&train.features, par)?)) } else { None };
    Ok(Weights { test: test_w, train: train_w })
}

fn explain_bridge(
    settings: &BridgeSettings,
    name: &str,
    seed: Seed,
    model: &TrainedModel,
    train: &Dataset,
    test: &Dataset,
    need_train: bool,
) -> Result<Weights> {
    let mut config = settings.config.clone();
    if let serde_json::Value::Object(map) = &mut config {
        map.entry("seed").or_insert(serde_json::json!(seed.0));
    } else if config.is_null() {
        config = serde_json::json!({ "seed": seed.0 });
    }
    let run = |points: &nalgebra::DMatrix<f64>| {
        host_invoke_bridge(&settings.command, name, model, &train.features, &train.labels, points, config.clone())
    };
    let test_w = weights_of(run(&test.features)?);
    let train_w = if need_train { Some(weights_of(run(&train.features)?)) } else { None };
    Ok(Weights { test: test_w, train: train_w })
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    cfg: &ExperimentConfig,
    setup: &Result<Setup>,
    rho: f64,
    t: usize,
    explainers: &[String],
    metrics: &[MetricId],
    par: Parallelism,
) -> TrialRun {
    let seed = trial_seed(cfg.seed, t);
    let mut stages = StageSeconds::default();
    let mut info = TrialInfo {
        rho,
        trial: t,
        seed,
        test_label_mean: None,
        test_label_std: None,
        train_mse: None,
        test_mse: None,
        error: None,
    };
    let fail_all = |msg: String, info: TrialInfo, stages| TrialRun {
        info: TrialInfo { error: Some(msg.clone()), ..info },
        cells: (0..explainers.len() * metrics.len())
            .map(|_| TrialOutcome { trial: t, seed, result: None, error: Some(msg.clone()), seconds: None })
            .collect(),
        stages,
    };
    let setup = match setup {
        Ok(s) => s,
        Err(e) => return fail_all(format!("setup: {e}"), info, stages),
    };
    let (data, secs) = timed(|| -> Result<(Dataset, Dataset)> {
        let train = generate_dataset(
            setup.dist.clone(),
            setup.labeler.clone(),
            cfg.train_size,
            setup.stats,
            seed.derive(stream::TRAIN),
            par,
        )?;
        let test =
            generate_dataset(setup.dist.clone(), setup.labeler.clone(), cfg.test_size, setup.stats, seed.derive(stream::TEST), par)?;
        Ok((train, test))
    });
    stages.generate += secs;
    let (train, test) = match data {
        Ok(d) => d,
        Err(e) => return fail_all(format!("data generation: {e}"), info, stages),
    };
    let (label_mean, label_std) = crate::metrics::mean_std(&test.labels);
    info.test_label_mean = label_mean;
    info.test_label_std = label_std;
    let (model, secs) = timed(|| cfg.model.fit(&train.features, &train.labels, seed.derive(stream::MODEL)));
    stages.train += secs;
    let model = match model {
        Ok(m) => m,
        Err(e) => return fail_all(format!("training: {e}"), info, stages),
    };
    info.train_mse = Some(model.train_mse);
    info.test_mse = Some(mse(&model.predict_batch(&test.features), &test.labels));

    let engine = ExpectationEngine {
        mode: cfg.mode,
        mc_samples: cfg.mc_samples,
        seed: seed.derive(stream::METRIC),
        estimator: Estimator::Auto,
        cache: true,
    };
    let ctx = match engine.bind(&model, &test.distribution) {
        Ok(c) => c,
        Err(e) => return fail_all(format!("metric context: {e}"), info, stages),
    };
    let need_train = metrics.contains(&MetricId::Roar);
    let mut cells = Vec::with_capacity(explainers.len() * metrics.len());
    for name in explainers {
        let eseed = explainer_seed(seed, name);
        let (weights, explain_secs) = timed(|| match name.strip_prefix("bridge:") {
            Some(bridge_name) => match &cfg.bridge {
                Some(settings) => explain_bridge(settings, bridge_name, eseed, &model, &train, &test, need_train),
                None => Err(Error::InvalidParameter("no bridge configured".into())),
            },
            None => name.parse::<ExplainerId>().and_then(|id| {
                explain_native(cfg, id, eseed, &model, &ctx, &train, &test, need_train, par)
            }),
        });
        stages.explain += explain_secs;
        let weights = match weights {
            Ok(w) => w,
            Err(e) => {
                log::warn!("rho={rho} trial={t} explainer {name} failed: {e}");
                let msg = format!("explainer: {e}");
                cells.extend(metrics.iter().map(|_| TrialOutcome {
                    trial: t,
                    seed,
                    result: None,
                    error: Some(msg.clone()),
                    seconds: cfg.timing.then_some(explain_secs),
                }));
                continue;
            }
        };
        for &metric in metrics {
            let (scored, score_secs) = timed(|| -> Result<MetricResult> {
                if metric == MetricId::Roar {
                    let rcfg = RoarConfig { mode: cfg.mode, clip: cfg.metric_options.roar_clip, seed: seed.derive(stream::FRESH) };
                    let train_w = weights.train.as_ref().expect("train weights requested for roar");
                    let out = roar(&cfg.model, &train, &test, train_w, &weights.test, &rcfg, par)?;
                    Ok(MetricResult::from_points(MetricId::Roar, vec![Some(out.auc)], vec![out.curve]))
                } else {
                    evaluate_points(metric, &ctx, &test.features, &weights.test, &cfg.metric_options, par)
                }
            });
            stages.score += score_secs;
            let seconds = cfg.timing.then_some(explain_secs + score_secs);
            cells.push(match scored {
                Ok(r) => TrialOutcome { trial: t, seed, result: Some(r), error: None, seconds },
                Err(e) => {
                    log::warn!("rho={rho} trial={t} {name}/{} failed: {e}", metric.as_str());
                    TrialOutcome { trial: t, seed, result: None, error: Some(format!("metric: {e}")), seconds }
                }
            });
        }
    }
    TrialRun { info, cells, stages }
}

fn aggregate(
    cfg: &ExperimentConfig,
    rho: f64,
    explainer: &str,
    metric: MetricId,
    label_kind: &str,
    trials: Vec<TrialOutcome>,
) -> CellResult {
    let means: Vec<f64> = trials.iter().filter_map(|o| o.result.as_ref().and_then(|r| r.mean)).collect();
    let (mean, std) = crate::metrics::mean_std(&means);
    let n_missing = trials
        .iter()
        .map(|o| match &o.result {
            Some(r) => r.n_missing,
            None => cfg.test_size,
        })
        .sum();
    let failed_trials = trials.iter().filter(|o| o.error.is_some()).count();
    let seconds = if cfg.timing { Some(trials.iter().filter_map(|o| o.seconds).sum()) } else { None };
    CellResult {
        dataset: cfg.dataset.as_str().to_string(),
        label_kind: label_kind.to_string(),
        rho,
        model: cfg.model.name().to_string(),
        explainer: explainer.to_string(),
        metric,
        mode: cfg.mode,
        mean,
        std,
        n_missing,
        failed_trials,
        seconds,
        trials,
    }
}

/// Runs every (rho, trial) combination and aggregates per cell. Stage
/// failures are recorded in the affected cells; the run itself only fails
/// on an invalid configuration or unreadable input data.
pub fn run_experiment(cfg: &ExperimentConfig, par: Parallelism) -> Result<RunResult> {
    cfg.validate()?;
    let explainers: Vec<String> = cfg
        .explainer_list()
        .iter()
        .map(|e| e.as_str().to_string())
        .chain(cfg.bridge.iter().flat_map(|b| b.explainers.iter().map(|n| format!("bridge:{n}"))))
        .collect();
    let metrics = cfg.metric_list();
    let mut stages = StageSeconds::default();
    let start = Instant::now();
    let sim = match (cfg.dataset, &cfg.real_csv) {
        (DatasetFamily::Simulated, Some(path)) => {
            let real = RealDataset::from_csv(path)?;
            Some(Simulation::fit(&real, &cfg.simulation, Seed(cfg.seed).derive(stream::SIMULATION), par))
        }
        _ => None,
    };
    stages.setup += start.elapsed().as_secs_f64();
    let label_kind = if cfg.dataset == DatasetFamily::Simulated { "knn" } else { cfg.label.as_str() };
    let mut cells = Vec::new();
    let mut trial_info = Vec::new();
    for &rho in &cfg.rho {
        let (setup, secs) = timed(|| match &sim {
            Some(Ok(s)) => setup_for(cfg, rho, Some(s), par),
            Some(Err(e)) => Err(Error::InvalidParameter(format!("simulation fit failed: {e}"))),
            None => setup_for(cfg, rho, None, par),
        });
        stages.setup += secs;
        if let Err(e) = &setup {
            log::warn!("rho={rho}: {e}");
        }
        let runs = par::map_indexed(par, cfg.trials, |t| run_trial(cfg, &setup, rho, t, &explainers, &metrics, par));
        let mut per_cell: Vec<Vec<TrialOutcome>> = vec![Vec::with_capacity(cfg.trials); explainers.len() * metrics.len()];
        for run in runs {
            for (slot, outcome) in per_cell.iter_mut().zip(run.cells) {
                slot.push(outcome);
            }
            let s = run.stages;
            stages.generate += s.generate;
            stages.train += s.train;
            stages.explain += s.explain;
            stages.score += s.score;
            trial_info.push(run.info);
        }
        for (i, trials) in per_cell.into_iter().enumerate() {
            let (e, m) = (i / metrics.len(), i % metrics.len());
            cells.push(aggregate(cfg, rho, &explainers[e], metrics[m], label_kind, trials));
        }
    }
    Ok(RunResult {
        fingerprint: cfg.fingerprint()?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        cells,
        trial_info,
        stage_seconds: cfg.timing.then_some(stages),
    })
}

/// Test MSE of predicting the training-label mean everywhere.
pub fn constant_predictor_mse(train_labels: &[f64], test_labels: &[f64]) -> f64 {
    let mean = train_labels.iter().sum::<f64>() / train_labels.len() as f64;
    mse(&vec![mean; test_labels.len()], test_labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelers::LabelKind;
    use crate::models::{LinearSpec, ModelSpec};

    fn small(explainers: Vec<ExplainerId>, metrics: Vec<MetricId>) -> ExperimentConfig {
        ExperimentConfig {
            label: LabelKind::Linear,
            model: ModelSpec::Linear(LinearSpec::default()),
            explainers,
            metrics,
            trials: 2,
            train_size: 200,
            test_size: 10,
            normalization_samples: 10_000,
            mc_samples: 100,
            ..Default::default()
        }
    }

    #[test]
    fn structure_one_cell_per_rho_explainer_metric() {
        let cfg = ExperimentConfig {
            rho: vec![0.0, 0.5],
            ..small(vec![ExplainerId::KernelShap], vec![MetricId::Faithfulness, MetricId::GtShapley])
        };
        let r = run_experiment(&cfg, Parallelism::Parallel).unwrap();
        assert_eq!(r.cells.len(), 2 * 2 * 2);
        assert_eq!(r.exit_code(), 0);
        assert!(r.cells.iter().all(|c| c.trials.len() == 2 && c.seconds.is_none()));
        assert_eq!(r.cells[0].explainer, "random");
        assert_eq!(r.trial_info.len(), 4);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let seeds: Vec<Seed> = (0..100).map(|t| trial_seed(7, t)).collect();
        let mut unique = seeds.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
    }

    #[test]
    fn aggregated_std_is_sample_std_of_trial_means() {
        let cfg = ExperimentConfig { trials: 3, ..small(vec![], vec![MetricId::Faithfulness]) };
        let r = run_experiment(&cfg, Parallelism::Sequential).unwrap();
        let c = &r.cells[0];
        let means: Vec<f64> = c.trials.iter().map(|t| t.result.as_ref().unwrap().mean.unwrap()).collect();
        let (m, s) = crate::metrics::mean_std(&means);
        assert_eq!((c.mean, c.std), (m, s));
    }

    #[test]
    fn failures_are_isolated_per_cell() {
        // Kernel SHAP with too small a coalition budget fails validation on
        // D = 5; the random baseline must be unaffected.
        let mut cfg = small(vec![ExplainerId::KernelShap], vec![MetricId::Faithfulness]);
        cfg.explainer_options.coalition_samples = 3;
        let bad = run_experiment(&cfg, Parallelism::Sequential).unwrap();
        let good = run_experiment(&small(vec![], vec![MetricId::Faithfulness]), Parallelism::Sequential).unwrap();
        assert_eq!(bad.exit_code(), 2);
        assert_eq!(bad.cell(0.0, "kernel_shap", MetricId::Faithfulness).unwrap().failed_trials, 2);
        assert_eq!(
            bad.cell(0.0, "random", MetricId::Faithfulness).unwrap().trials,
            good.cell(0.0, "random", MetricId::Faithfulness).unwrap().trials
        );
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let cfg = small(vec![ExplainerId::Lime, ExplainerId::Breakdown], vec![MetricId::Monotonicity, MetricId::Infidelity]);
        let a = run_experiment(&cfg, Parallelism::Parallel).unwrap();
        let b = run_experiment(&cfg, Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn roar_cells_record_auc_and_curve() {
        let cfg = ExperimentConfig { trials: 1, ..small(vec![], vec![MetricId::Roar]) };
        let r = run_experiment(&cfg, Parallelism::Sequential).unwrap();
        let res = r.cells[0].trials[0].result.as_ref().unwrap();
        assert_eq!(res.trace[0].len(), 6);
        assert!(res.mean.unwrap() > 0.0);
    }

    #[test]
    fn mixture_and_multinomial_families_run() {
        for dataset in [DatasetFamily::Mixture, DatasetFamily::Multinomial] {
            let cfg = ExperimentConfig { dataset, trials: 1, ..small(vec![ExplainerId::ExactShapley], vec![MetricId::GtShapley]) };
            let r = run_experiment(&cfg, Parallelism::Sequential).unwrap();
            assert_eq!(r.exit_code(), 0, "{dataset:?}: {:?}", r.cells);
            let c = r.cell(0.0, "exact_shapley", MetricId::GtShapley).unwrap();
            assert!(c.mean.unwrap() > 0.999, "{dataset:?}");
        }
    }
}
