//! Gaussian twins of real tabular data.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{Distribution, GaussianSpec};
use crate::error::{Error, Result};
use crate::explainers::Attribution;
use crate::labelers::{fit_normalization, generate_dataset, Dataset, KnnLabeler, Labeler, NormalizationStats};
use crate::par::Parallelism;
use crate::rng::{stream, Seed};

pub const JSD_BINS: usize = 120;
pub const JSD_RANGE: (f64, f64) = (-6.0, 6.0);
/// Diagonal repair applied when the empirical covariance is not positive definite.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

const MISSING: [&str; 5] = ["", "na", "nan", "null", "?"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealDataset {
    #[serde(with = "crate::linalg::serde_rows")]
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub columns: Vec<String>,
    /// Rows dropped during ingestion because of missing values.
    pub dropped_rows: usize,
}

impl RealDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>, columns: Vec<String>) -> Result<Self> {
        let (n, d) = features.shape();
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        if columns.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: columns.len() });
        }
        if n < d + 1 {
            return Err(Error::InvalidParameter(format!("need at least D+1 = {} rows, got {n}", d + 1)));
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("real data contains non-finite values".into()));
        }
        Ok(RealDataset { features, labels, columns, dropped_rows: 0 })
    }

    /// Reads a headed CSV; the delimiter (`;` or `,`) is detected from the
    /// header line and the last column is the label.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let header = text.lines().next().unwrap_or("");
        let delimiter = if header.matches(';').count() > header.matches(',').count() { b';' } else { b',' };
        let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).trim(csv::Trim::All).from_reader(text.as_bytes());
        let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if names.len() < 2 {
            return Err(Error::InvalidParameter("CSV needs at least one feature and a label column".into()));
        }
        let mut rows = Vec::new();
        let mut dropped = 0;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.iter().any(|s| MISSING.contains(&s.to_ascii_lowercase().as_str())) {
                dropped += 1;
                continue;
            }
            let vals = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("row {}: '{s}' is not a number", line + 2)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != names.len() {
                return Err(Error::InvalidParameter(format!("row {} has {} fields", line + 2, vals.len())));
            }
            rows.push(vals);
        }
        let d = names.len() - 1;
        let features = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
        let labels = rows.iter().map(|r| r[d]).collect();
        let mut real = RealDataset::new(features, labels, names[..d].to_vec())?;
        real.dropped_rows = dropped;
        if dropped > 0 {
            log::warn!("dropped {dropped} rows with missing values");
        }
        Ok(real)
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

fn mean_and_sample_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fitted twin: a zero-mean Gaussian on standardized features and a kNN
/// labeler over the standardized real rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub gaussian: GaussianSpec,
    pub knn_k: usize,
    pub reference: KnnLabeler,
    pub columns: Vec<String>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
    pub ridge_repaired: bool,
    pub dropped_rows: usize,
}

impl SimulationSpec {
    pub fn fit(real: &RealDataset, knn_k: usize) -> Result<Self> {
        let (n, d) = real.features.shape();
        let mut z = real.features.clone();
        let mut feature_mean = Vec::with_capacity(d);
        let mut feature_std = Vec::with_capacity(d);
        for j in 0..d {
            let (m, s) = mean_and_sample_std(real.features.column(j).iter().copied());
            if !(s > 0.0) {
                return Err(Error::InvalidParameter(format!("feature '{}' is constant", real.columns[j])));
            }
            z.column_mut(j).apply(|v| *v = (*v - m) / s);
            feature_mean.push(m);
            feature_std.push(s);
        }
        let mut sigma = z.transpose() * &z / (n - 1) as f64;
        crate::linalg::symmetrize(&mut sigma);
        let (gaussian, ridge_repaired) = match GaussianSpec::new(vec![0.0; d], sigma.clone()) {
            Ok(g) => (g, false),
            Err(_) => {
                log::warn!("empirical covariance is not positive definite; adding a {COVARIANCE_RIDGE:e} ridge");
                for i in 0..d {
                    sigma[(i, i)] += COVARIANCE_RIDGE;
                }
                let g = GaussianSpec::new(vec![0.0; d], sigma)
                    .map_err(|e| Error::Singular(format!("covariance is singular after ridge repair: {e}")))?;
                (g, true)
            }
        };
        let (label_mean, label_std) = mean_and_sample_std(real.labels.iter().copied());
        let reference = KnnLabeler::new(knn_k, z, real.labels.clone())?;
        Ok(SimulationSpec {
            gaussian,
            knn_k,
            reference,
            columns: real.columns.clone(),
            feature_mean,
            feature_std,
            label_mean,
            label_std,
            ridge_repaired,
            dropped_rows: real.dropped_rows,
        })
    }

    /// Real labels on the same standardized scale as the simulated ones.
    pub fn standardized_real_labels(&self) -> Vec<f64> {
        self.reference.labels.iter().map(|y| (y - self.label_mean) / self.label_std).collect()
    }

    /// Real features standardized with the fitted moments.
    pub fn standardized_real_features(&self) -> &DMatrix<f64> {
        &self.reference.reference
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationOptions {
    pub knn_k: usize,
    pub normalization_samples: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions { knn_k: 5, normalization_samples: 20_000 }
    }
}

/// A fitted twin ready to generate datasets.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub spec: SimulationSpec,
    pub distribution: Arc<Distribution>,
    pub labeler: Arc<Labeler>,
    pub normalization: NormalizationStats,
}

impl Simulation {
    pub fn fit(real: &RealDataset, opts: &SimulationOptions, seed: Seed, par: Parallelism) -> Result<Self> {
        let spec = SimulationSpec::fit(real, opts.knn_k)?;
        let distribution = Arc::new(Distribution::Gaussian(spec.gaussian.clone()));
        let labeler = Arc::new(Labeler::Knn(spec.reference.clone()));
        let normalization = fit_normalization(
            &labeler,
            &distribution,
            opts.normalization_samples,
            seed.derive(stream::NORMALIZATION),
            par,
        )?;
        Ok(Simulation { spec, distribution, labeler, normalization })
    }

    pub fn generate(&self, n: usize, seed: Seed, par: Parallelism) -> Result<Dataset> {
        generate_dataset(self.distribution.clone(), self.labeler.clone(), n, self.normalization, seed, par)
    }
}

/// Fits a twin of `real` and draws `n` synthetic rows.
pub fn simulate_from_real(
    real: &RealDataset,
    opts: &SimulationOptions,
    n: usize,
    seed: Seed,
    par: Parallelism,
) -> Result<(Dataset, SimulationSpec)> {
    let sim = Simulation::fit(real, opts, seed, par)?;
    let data = sim.generate(n, seed.derive(stream::SIMULATION), par)?;
    Ok((data, sim.spec))
}

fn histogram(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let (lo, hi) = JSD_RANGE;
    let width = (hi - lo) / JSD_BINS as f64;
    let mut counts = vec![0usize; JSD_BINS];
    let mut n = 0usize;
    for v in values {
        let b = ((v - lo) / width).floor();
        let b = if b.is_nan() { 0 } else { b.clamp(0.0, (JSD_BINS - 1) as f64) as usize };
        counts[b] += 1;
        n += 1;
    }
    counts.into_iter().map(|c| c as f64 / n as f64).collect()
}

fn half_kl_term(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        p * (p / m).log2()
    } else {
        0.0
    }
}

/// Base-2 Jensen-Shannon divergence of two samples, histogrammed on the
/// fixed bins.
pub fn jsd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("jsd needs nonempty samples".into()));
    }
    let p = histogram(a.iter().copied());
    let q = histogram(b.iter().copied());
    let total: f64 = p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| {
            let m = (pi + qi) * 0.5;
            0.5 * (half_kl_term(pi, m) + half_kl_term(qi, m))
        })
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsdReport {
    pub per_column: Vec<f64>,
    pub mean: f64,
}

/// Column-wise JSD between two samples with the same number of columns.
pub fn jsd_marginals(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<JsdReport> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
    }
    let per_column = (0..a.ncols())
        .map(|j| {
            let x: Vec<f64> = a.column(j).iter().copied().collect();
            let y: Vec<f64> = b.column(j).iter().copied().collect();
            jsd(&x, &y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_column.iter().sum::<f64>() / per_column.len().max(1) as f64;
    Ok(JsdReport { per_column, mean })
}

/// Mean over datapoints of the mean squared weight difference.
pub fn explanation_mse(a: &[Attribution], b: &[Attribution]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Misaligned(format!("batches have {} and {} attributions", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.datapoint_index != y.datapoint_index || x.weights.len() != y.weights.len() || x.weights.is_empty() {
            return Err(Error::Misaligned(format!(
                "datapoint {} (D={}) paired with datapoint {} (D={})",
                x.datapoint_index,
                x.weights.len(),
                y.datapoint_index,
                y.weights.len()
            )));
        }
        let d = x.weights.len() as f64;
        total += x.weights.iter().zip(&y.weights).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / d;
    }
    Ok(total / a.len() as f64)
}
