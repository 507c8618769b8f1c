use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunResult;
use crate::error::Result;
use crate::labelers::fmt_f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// `summary.csv`
    Summary,
    /// `results.json`
    Json,
    /// `plot.csv`
    Plot,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::Summary, OutputFormat::Json, OutputFormat::Plot];

    pub fn file_name(self) -> &'static str {
        match self {
            OutputFormat::Summary => "summary.csv",
            OutputFormat::Json => "results.json",
            OutputFormat::Plot => "plot.csv",
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub const SUMMARY_HEADER: [&str; 11] =
    ["dataset", "label_kind", "rho", "model", "explainer", "metric", "mode", "mean", "std", "n_missing", "seconds"];

pub fn write_summary_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for c in &result.cells {
        w.write_record([
            c.dataset.clone(),
            c.label_kind.clone(),
            fmt_f64(c.rho),
            c.model.clone(),
            c.explainer.clone(),
            c.metric.as_str().to_string(),
            c.mode.as_str().to_string(),
            opt(c.mean),
            opt(c.std),
            c.n_missing.to_string(),
            opt(c.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (explainer, metric, rho): `x` is rho, `y` the mean and
/// `error` the standard deviation.
pub fn write_plot_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["explainer", "metric", "x", "y", "error"])?;
    let mut cells: Vec<_> = result.cells.iter().collect();
    // Stable sort keeps rho in configured order within each series.
    cells.sort_by_key(|c| {
        let e = result.cells.iter().position(|d| d.explainer == c.explainer).unwrap_or(0);
        (e, c.metric)
    });
    for c in cells {
        w.write_record([c.explainer.clone(), c.metric.as_str().to_string(), fmt_f64(c.rho), opt(c.mean), opt(c.std)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the requested files into `dir`, creating it if needed.
pub fn emit_results(result: &RunResult, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(f.file_name());
        match f {
            OutputFormat::Summary => write_summary_csv(result, &path)?,
            OutputFormat::Plot => write_plot_csv(result, &path)?,
            OutputFormat::Json => {
                let mut file = std::fs::File::create(&path)?;
                file.write_all(result.to_json()?.as_bytes())?;
                file.write_all(b"\n")?;
            }
        }
        written.push(path);
    }
    Ok(written)
}
