//! Metric rows and summary tables as CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};

/// Bumped whenever the column set changes; recorded in each run's `run.json`.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 11] = [
    "run_id",
    "seed",
    "epoch",
    "split",
    "loss_total",
    "loss_parts",
    "mi_ksg",
    "nll",
    "recon_rmse",
    "knn_acc",
    "wall_ms",
];

/// One row per (run, epoch, split). Evaluation metrics are filled only on
/// the `test` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub loss_total: f64,
    /// `name=value` pairs joined by `;`.
    pub loss_parts: String,
    pub mi_ksg: Option<f64>,
    pub nll: Option<f64>,
    pub recon_rmse: Option<f64>,
    pub knn_acc: Option<f64>,
    pub wall_ms: u64,
}

pub fn format_parts<'a>(parts: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    parts
        .into_iter()
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_parts(s: &str) -> Result<Vec<(String, f64)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("bad loss part `{kv}`")))?;
            let v = v
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad loss part value `{kv}`")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::InvalidArgument(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "dataset",
    "objective",
    "hidden_units",
    "n_runs",
    "mi_ksg_mean",
    "mi_ksg_std",
    "nll_mean",
    "nll_std",
    "recon_rmse_mean",
    "recon_rmse_std",
    "knn_acc_mean",
    "knn_acc_std",
];

/// Mean and sample standard deviation of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub objective: String,
    pub hidden_units: usize,
    pub n_runs: usize,
    pub mi_ksg_mean: Option<f64>,
    pub mi_ksg_std: Option<f64>,
    pub nll_mean: Option<f64>,
    pub nll_std: Option<f64>,
    pub recon_rmse_mean: Option<f64>,
    pub recon_rmse_std: Option<f64>,
    pub knn_acc_mean: Option<f64>,
    pub knn_acc_std: Option<f64>,
}

/// `(mean, sample std)` over the present values; std is 0 for one value.
pub fn mean_std(values: impl IntoIterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
