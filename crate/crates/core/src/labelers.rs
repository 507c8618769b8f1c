//! Synthetic label functions and label normalization.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{ensure_dim, Error, Result};
use crate::par::{self, Parallelism};
use crate::rng::{stream, Seed};

/// Default number of samples used to estimate normalization statistics.
pub const DEFAULT_NORMALIZATION_SAMPLES: usize = 1_000_000;
/// Smallest accepted normalization sample.
pub const MIN_NORMALIZATION_SAMPLES: usize = 10_000;
const NORMALIZATION_CHUNK: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Linear,
    PiecewiseLinear,
    PiecewiseConstant,
    NonlinearAdditive,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Linear => "linear",
            LabelKind::PiecewiseLinear => "piecewise_linear",
            LabelKind::PiecewiseConstant => "piecewise_constant",
            LabelKind::NonlinearAdditive => "nonlinear_additive",
        }
    }

    pub const ALL: [LabelKind; 4] = [
        LabelKind::Linear,
        LabelKind::PiecewiseLinear,
        LabelKind::PiecewiseConstant,
        LabelKind::NonlinearAdditive,
    ];
}

impl std::str::FromStr for LabelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LabelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown label kind '{s}'")))
    }
}

/// A deterministic map from features to raw labels, `y_raw = sum_n psi_n(x_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelFunction {
    pub kind: LabelKind,
    pub dim: usize,
    /// Weights for the linear families; `[0, 1, ..., dim-1]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl LabelFunction {
    pub fn new(kind: LabelKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("label function needs at least one feature".into()));
        }
        if matches!(kind, LabelKind::PiecewiseConstant | LabelKind::NonlinearAdditive) && dim < 5 {
            return Err(Error::InvalidParameter(format!("{} labels need at least 5 features, got {dim}", kind.as_str())));
        }
        Ok(LabelFunction { kind, dim, weights: None })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        ensure_dim(self.dim, weights.len())?;
        if !matches!(self.kind, LabelKind::Linear | LabelKind::PiecewiseLinear) {
            return Err(Error::InvalidParameter(format!("{} labels take no weights", self.kind.as_str())));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| (0..self.dim).map(|i| i as f64).collect())
    }

    pub fn raw_label(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match self.kind {
            LabelKind::Linear => dot(&self.weights(), x),
            LabelKind::PiecewiseLinear => {
                let w = self.weights();
                if x.iter().sum::<f64>() > 0.0 {
                    dot(&w, x)
                } else {
                    w.iter().rev().zip(x).map(|(a, b)| a * b).sum()
                }
            }
            LabelKind::PiecewiseConstant => {
                let psi1 = if x[0] >= 0.0 { 1.0 } else { -1.0 };
                let psi2 = if x[1] < -0.5 {
                    -2.0
                } else if x[1] < 0.0 {
                    -1.0
                } else if x[1] < 0.5 {
                    1.0
                } else {
                    2.0
                };
                let psi3 = (2.0 * (std::f64::consts::PI * x[2]).cos()).trunc();
                psi1 + psi2 + psi3
            }
            LabelKind::NonlinearAdditive => x[0].sin() + x[1].abs() + x[2] * x[2] + x[3].exp(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Labels a point by the mean label of its `k` nearest reference rows
/// (Euclidean distance, ties broken by lower row index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnLabeler {
    pub k: usize,
    #[serde(with = "crate::linalg::serde_rows")]
    pub reference: DMatrix<f64>,
    pub labels: Vec<f64>,
}

impl KnnLabeler {
    pub fn new(k: usize, reference: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("knn k must be at least 1".into()));
        }
        ensure_dim(reference.nrows(), labels.len())?;
        if reference.nrows() < k {
            return Err(Error::InvalidParameter(format!("k={k} exceeds {} reference rows", reference.nrows())));
        }
        Ok(KnnLabeler { k, reference, labels })
    }

    pub fn label(&self, x: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = (0..self.reference.nrows())
            .map(|r| {
                let d2: f64 = x.iter().enumerate().map(|(j, v)| (v - self.reference[(r, j)]).powi(2)).sum();
                (d2, r)
            })
            .collect();
        let key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, key);
        }
        dist[..self.k].iter().map(|&(_, r)| self.labels[r]).sum::<f64>() / self.k as f64
    }
}

/// Source of raw labels for a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "labeler", rename_all = "snake_case")]
pub enum Labeler {
    Function(LabelFunction),
    Knn(KnnLabeler),
}

impl Labeler {
    pub fn dim(&self) -> usize {
        match self {
            Labeler::Function(f) => f.dim,
            Labeler::Knn(k) => k.reference.ncols(),
        }
    }

    pub fn raw_label(&self, x: &[f64]) -> f64 {
        match self {
            Labeler::Function(f) => f.raw_label(x),
            Labeler::Knn(k) => k.label(x),
        }
    }

    pub fn raw_labels(&self, features: &DMatrix<f64>, par: Parallelism) -> Vec<f64> {
        par::map_indexed(par, features.nrows(), |r| {
            let row: Vec<f64> = features.row(r).iter().copied().collect();
            self.raw_label(&row)
        })
    }
}

impl From<LabelFunction> for Labeler {
    fn from(f: LabelFunction) -> Self {
        Labeler::Function(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
    pub sample_count: usize,
    pub seed: Seed,
}

impl NormalizationStats {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }
}

/// Estimates the mean and standard deviation of raw labels from a fresh
/// sample of `sample_count` draws.
pub fn fit_normalization(
    labeler: &Labeler,
    dist: &Distribution,
    sample_count: usize,
    seed: Seed,
    par: Parallelism,
) -> Result<NormalizationStats> {
    if sample_count < MIN_NORMALIZATION_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "normalization needs at least {MIN_NORMALIZATION_SAMPLES} samples, got {sample_count}"
        )));
    }
    ensure_dim(dist.dim(), labeler.dim())?;
    let chunks = sample_count.div_ceil(NORMALIZATION_CHUNK);
    let raw: Vec<f64> = par::map_indexed(par, chunks, |c| {
        let n = NORMALIZATION_CHUNK.min(sample_count - c * NORMALIZATION_CHUNK);
        let x = dist.sample(n, seed.derive(c as u64));
        labeler.raw_labels(&x, Parallelism::Sequential)
    })
    .concat();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) || !std.is_finite() {
        return Err(Error::DegenerateLabeler(format!("raw labels have standard deviation {std}")));
    }
    Ok(NormalizationStats { mean, std, sample_count, seed })
}

/// Features with normalized labels, plus everything needed to regenerate them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub distribution: Arc<Distribution>,
    pub labeler: Arc<Labeler>,
    pub normalization: NormalizationStats,
    pub seed: Seed,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    rows: usize,
    seed: Seed,
    distribution: &'a Distribution,
    labeler: &'a Labeler,
    normalization: &'a NormalizationStats,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        crate::linalg::row_vec(&self.features, i)
    }

    /// Same metadata with replaced features; labels are kept.
    pub fn with_features(&self, features: DMatrix<f64>) -> Dataset {
        Dataset { features, ..self.clone() }
    }

    /// CSV with header `x1..xD,y`, numbers at 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(r).iter().map(|v| fmt_f64(*v)).collect();
            rec.push(fmt_f64(self.labels[r]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let sidecar = Sidecar {
            rows: self.len(),
            seed: self.seed,
            distribution: &self.distribution,
            labeler: &self.labeler,
            normalization: &self.normalization,
        };
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &sidecar)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`] into features and labels.
    pub fn read_csv(path: &Path) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::InvalidParameter(format!("bad number '{s}': {e}"))))
                .collect::<Result<_>>()?;
            let (y, x) = vals.split_last().ok_or_else(|| Error::InvalidParameter("empty CSV row".into()))?;
            labels.push(*y);
            rows.push(x.to_vec());
        }
        Ok((crate::linalg::dmatrix_from_rows(&rows)?, labels))
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Draws `n` rows from `dist` and labels them with normalized labels.
pub fn generate_dataset(
    dist: Arc<Distribution>,
    labeler: Arc<Labeler>,
    n: usize,
    stats: NormalizationStats,
    seed: Seed,
    par: Parallelism,
) -> Result<Dataset> {
    ensure_dim(dist.dim(), labeler.dim())?;
    let features = dist.sample(n, seed.derive(stream::TRAIN));
    let labels = labeler.raw_labels(&features, par).into_iter().map(|v| stats.apply(v)).collect();
    Ok(Dataset { features, labels, distribution: dist, labeler, normalization: stats, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lf(kind: LabelKind) -> LabelFunction {
        LabelFunction::new(kind, 5).unwrap()
    }

    #[test]
    fn nonlinear_additive_at_origin() {
        assert_eq!(lf(LabelKind::NonlinearAdditive).raw_label(&[0.0; 5]), 1.0);
    }

    #[test]
    fn piecewise_constant_example() {
        assert_eq!(lf(LabelKind::PiecewiseConstant).raw_label(&[1.0, 0.6, 0.0, 0.0, 0.0]), 5.0);
    }

    #[test]
    fn piecewise_constant_truncates_toward_zero() {
        // 2cos(0.6 pi) = -0.618..., truncation gives 0 where floor would give -1.
        let x = [1.0, 0.6, 0.6, 0.0, 0.0];
        assert_eq!(lf(LabelKind::PiecewiseConstant).raw_label(&x), 3.0);
    }

    #[test]
    fn linear_default_weights() {
        assert_eq!(lf(LabelKind::Linear).raw_label(&[1.0; 5]), 10.0);
    }

    #[test]
    fn piecewise_linear_reverses_on_nonpositive_sum() {
        let f = lf(LabelKind::PiecewiseLinear);
        assert_eq!(f.raw_label(&[-1.0, 0.0, 0.0, 0.0, 0.0]), -4.0);
        assert_eq!(f.raw_label(&[1.0, -1.0, 0.0, 0.0, 0.0]), 4.0 - 3.0);
    }

    #[test]
    fn short_dimension_is_rejected() {
        assert!(LabelFunction::new(LabelKind::PiecewiseConstant, 4).is_err());
        assert!(LabelFunction::new(LabelKind::NonlinearAdditive, 3).is_err());
        assert!(LabelFunction::new(LabelKind::Linear, 3).is_ok());
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let f = LabelFunction::new(LabelKind::Linear, 3).unwrap().with_weights(vec![0.0; 3]).unwrap();
        let d = Distribution::equicorrelated_gaussian(3, 0.0).unwrap();
        let err = fit_normalization(&f.into(), &d, 10_000, Seed(1), Parallelism::Sequential);
        assert!(matches!(err, Err(Error::DegenerateLabeler(_))));
    }

    #[test]
    fn normalization_of_sum_of_two_normals() {
        let f = LabelFunction::new(LabelKind::Linear, 2).unwrap().with_weights(vec![1.0, 1.0]).unwrap();
        let d = Distribution::equicorrelated_gaussian(2, 0.0).unwrap();
        let s = fit_normalization(&f.into(), &d, 1_000_000, Seed(2), Parallelism::Parallel).unwrap();
        assert!(s.mean.abs() < 0.02);
        assert!((s.std - 2f64.sqrt()).abs() < 0.02);
    }

    #[test]
    fn knn_nearest_row_identity() {
        let reference = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 5.0, 5.0]);
        let knn = KnnLabeler::new(1, reference, vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(knn.label(&[1.0, 1.0]), 20.0);
        let knn2 = KnnLabeler { k: 2, ..knn };
        assert_eq!(knn2.label(&[0.5, 0.5]), 15.0);
    }

    #[test]
    fn datasets_are_deterministic_and_csv_round_trips() {
        let d = Arc::new(Distribution::equicorrelated_gaussian(5, 0.3).unwrap());
        let l: Arc<Labeler> = Arc::new(lf(LabelKind::NonlinearAdditive).into());
        let s = fit_normalization(&l, &d, 10_000, Seed(3), Parallelism::Parallel).unwrap();
        let a = generate_dataset(d.clone(), l.clone(), 20, s, Seed(4), Parallelism::Parallel).unwrap();
        let b = generate_dataset(d, l, 20, s, Seed(4), Parallelism::Sequential).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        a.write_csv(&path).unwrap();
        let (x, y) = Dataset::read_csv(&path).unwrap();
        assert_eq!(x, a.features);
        assert_eq!(y, a.labels);
        a.write_sidecar(&dir.path().join("d.json")).unwrap();
    }

    proptest! {
        #[test]
        fn zero_psi_features_have_no_effect(x in proptest::collection::vec(-3.0f64..3.0, 6), d4 in -5.0f64..5.0, d5 in -5.0f64..5.0) {
            let pc = LabelFunction::new(LabelKind::PiecewiseConstant, 6).unwrap();
            let na = LabelFunction::new(LabelKind::NonlinearAdditive, 6).unwrap();
            let mut y = x.clone();
            y[3] = d4;
            y[4] = d5;
            y[5] = d4 - d5;
            prop_assert_eq!(pc.raw_label(&x), pc.raw_label(&y));
            let mut z = x.clone();
            z[4] = d5;
            z[5] = d4;
            prop_assert_eq!(na.raw_label(&x), na.raw_label(&z));
        }

        #[test]
        fn piecewise_linear_matches_linear_on_positive_half(x in proptest::collection::vec(-3.0f64..3.0, 5)) {
            prop_assume!(x.iter().sum::<f64>() > 0.0);
            prop_assert_eq!(lf(LabelKind::PiecewiseLinear).raw_label(&x), lf(LabelKind::Linear).raw_label(&x));
        }

        #[test]
        fn normalization_preserves_order(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let s = NormalizationStats { mean: 0.3, std: 1.7, sample_count: 10_000, seed: Seed(0) };
            prop_assert_eq!(a < b, s.apply(a) < s.apply(b));
        }
    }

    #[test]
    fn sum_two_normals_oracle() {
        // Direct check of the normalization identity on a self-sample.
        let f: Labeler = LabelFunction::new(LabelKind::Linear, 2).unwrap().into();
        let d = Distribution::equicorrelated_gaussian(2, 0.0).unwrap();
        let s = fit_normalization(&f, &d, 100_000, Seed(5), Parallelism::Parallel).unwrap();
        let x = d.sample(100_000, Seed(5).derive(0));
        let y: Vec<f64> = f.raw_labels(&x, Parallelism::Sequential).into_iter().map(|v| s.apply(v)).collect();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        assert_abs_diff_eq!(m, 0.0, epsilon = 0.01);
    }
}
