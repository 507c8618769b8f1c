use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use attribench::distributions::Distribution;
use attribench::explainers::ExplainerId;
use attribench::harness::{emit_results, run_experiment, DatasetFamily, ExperimentConfig, OutputFormat, RunResult};
use attribench::labelers::{fit_normalization, generate_dataset, LabelFunction, LabelKind, Labeler};
use attribench::metrics::{ExpectationMode, MetricId};
use attribench::models::ModelSpec;
use attribench::par::{with_worker_pool, Parallelism};
use attribench::rng::{stream, Seed};
use attribench::simulation::{jsd, jsd_marginals, simulate_from_real, RealDataset, SimulationOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attribench", version, about = "Benchmark local feature-attribution explainers")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write summary.csv, results.json and plot.csv.
    Run(RunArgs),
    /// Write a synthetic dataset CSV and its JSON sidecar.
    Generate(GenerateArgs),
    /// Fit a Gaussian twin of a real CSV and write a synthetic sample.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetFamily>,
    #[arg(long)]
    label: Option<LabelKind>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    dim: Option<usize>,
    /// linear, tree or mlp.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated list; the random baseline is always included.
    #[arg(long, value_delimiter = ',')]
    explainer: Option<Vec<ExplainerId>>,
    #[arg(long, value_delimiter = ',')]
    metric: Option<Vec<MetricId>>,
    #[arg(long)]
    mode: Option<ExpectationMode>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Real CSV for the simulated dataset family.
    #[arg(long)]
    real_csv: Option<PathBuf>,
    /// Record wall-clock seconds per cell.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "linear")]
    label: LabelKind,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    normalization_samples: usize,
    #[arg(long, default_value = "dataset")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Headed CSV, `;` or `,` delimited, label in the last column.
    #[arg(long)]
    real: PathBuf,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    #[arg(long, default_value_t = 20_000)]
    normalization_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "simulation")]
    out: PathBuf,
}

fn apply_overrides(mut cfg: ExperimentConfig, a: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    if let Some(v) = a.dataset {
        cfg.dataset = v;
    }
    if let Some(v) = a.label {
        cfg.label = v;
    }
    if let Some(v) = &a.rho {
        cfg.rho = v.clone();
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = &a.model {
        cfg.model = ModelSpec::from_name(v)?;
    }
    if let Some(v) = &a.explainer {
        cfg.explainers = v.clone();
    }
    if let Some(v) = &a.metric {
        cfg.metrics = v.clone();
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = &a.real_csv {
        cfg.real_csv = Some(v.clone());
    }
    cfg.timing |= a.timing;
    Ok(cfg)
}

fn print_summary(r: &RunResult) {
    println!("{:<8} {:<16} {:<14} {:>10} {:>10} {:>8}", "rho", "explainer", "metric", "mean", "std", "missing");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for c in &r.cells {
        println!(
            "{:<8} {:<16} {:<14} {:>10} {:>10} {:>8}",
            c.rho,
            c.explainer,
            c.metric.as_str(),
            fmt(c.mean),
            fmt(c.std),
            c.n_missing
        );
    }
}

fn run(a: RunArgs, par: Parallelism) -> anyhow::Result<i32> {
    let base = match &a.config {
        Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let cfg = apply_overrides(base, &a)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let result = run_experiment(&cfg, par)?;
    let files = emit_results(&result, &out, &OutputFormat::ALL)?;
    print_summary(&result);
    for f in files {
        log::info!("wrote {}", f.display());
    }
    if result.exit_code() != 0 {
        eprintln!("{} cell trials failed; see results.json for diagnostics", result.failed_cells());
    }
    Ok(result.exit_code())
}

fn generate(a: GenerateArgs, par: Parallelism) -> anyhow::Result<i32> {
    let dist = Arc::new(Distribution::equicorrelated_gaussian(a.dim, a.rho)?);
    let labeler = Arc::new(Labeler::from(LabelFunction::new(a.label, a.dim)?));
    let seed = Seed(a.seed);
    let stats = fit_normalization(&labeler, &dist, a.normalization_samples, seed.derive(stream::NORMALIZATION), par)?;
    let data = generate_dataset(dist, labeler, a.n, stats, seed, par)?;
    std::fs::create_dir_all(&a.out)?;
    data.write_csv(&a.out.join("data.csv"))?;
    data.write_sidecar(&a.out.join("data.json"))?;
    println!("wrote {} rows to {}", data.len(), a.out.display());
    Ok(0)
}

fn simulate(a: SimulateArgs, par: Parallelism) -> anyhow::Result<i32> {
    let real = RealDataset::from_csv(&a.real).with_context(|| format!("reading {}", a.real.display()))?;
    let opts = SimulationOptions { knn_k: a.knn_k, normalization_samples: a.normalization_samples };
    let (data, spec) = simulate_from_real(&real, &opts, a.n, Seed(a.seed), par)?;
    std::fs::create_dir_all(&a.out)?;
    data.write_csv(&a.out.join("synthetic.csv"))?;
    std::fs::write(a.out.join("simulation.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    let features = jsd_marginals(&data.features, spec.standardized_real_features())?;
    let target = jsd(&data.labels, &spec.standardized_real_labels())?;
    let report = serde_json::json!({
        "rows_real": real.features.nrows(),
        "rows_dropped": real.dropped_rows,
        "ridge_repaired": spec.ridge_repaired,
        "feature_jsd": features.per_column,
        "mean_feature_jsd": features.mean,
        "target_jsd": target,
    });
    std::fs::write(a.out.join("fidelity.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("mean feature JSD {:.4}, target JSD {:.4}", features.mean, target);
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let par = if cli.sequential { Parallelism::Sequential } else { Parallelism::Parallel };
    let outcome = with_worker_pool(move || match cli.command {
        Command::Run(a) => run(a, par),
        Command::Generate(a) => generate(a, par),
        Command::Simulate(a) => simulate(a, par),
    });
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
