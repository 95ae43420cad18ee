use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::RunRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitFormat {
    Csv,
    Json,
}

/// Per-method, per-task result over seeds: means with 95% confidence
/// half-widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub task: String,
    pub seeds: usize,
    pub mid_return: f64,
    pub mid_return_ci: f64,
    pub final_return: f64,
    pub final_return_ci: f64,
    pub final_success: f64,
    pub final_success_ci: f64,
}

/// One training episode of one seed, in long format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: Method,
    pub task: String,
    pub seed: u64,
    pub step: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
}

/// Mean and the half-width of a normal-approximation 95% interval (sample
/// standard deviation). A single value has width 0.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Groups records by (method, task), pooling the seeds of repeated records.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, String), Vec<&super::SeedResult>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method, r.task.clone()))
            .or_default()
            .extend(&r.seeds);
    }
    groups
        .into_iter()
        .map(|((method, task), seeds)| {
            let col = |f: fn(&super::SeedResult) -> f64| {
                mean_ci(&seeds.iter().map(|s| f(s)).collect::<Vec<_>>())
            };
            let (mid_return, mid_return_ci) = col(|s| s.mid.mean_return);
            let (final_return, final_return_ci) = col(|s| s.fin.mean_return);
            let (final_success, final_success_ci) = col(|s| s.fin.success_rate);
            SummaryRow {
                method,
                task,
                seeds: seeds.len(),
                mid_return,
                mid_return_ci,
                final_return,
                final_return_ci,
                final_success,
                final_success_ci,
            }
        })
        .collect()
}

pub fn curve_rows(records: &[RunRecord]) -> Vec<CurveRow> {
    records
        .iter()
        .flat_map(|r| {
            r.seeds.iter().flat_map(move |s| {
                s.curve.iter().map(move |p| CurveRow {
                    method: r.method,
                    task: r.task.clone(),
                    seed: s.seed,
                    step: p.step,
                    ret: p.ret,
                    success: p.success,
                })
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_curves_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveRow>> {
    read_csv(path)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    read_csv(path)
}

/// Writes `summary.csv` or `summary.json` plus the long-format
/// `curves.csv` into `dir`. Returns the written paths.
pub fn aggregate_and_emit(
    records: &[RunRecord],
    format: EmitFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    std::fs::create_dir_all(dir)?;
    let rows = summarize(records);
    let summary = match format {
        EmitFormat::Csv => {
            let p = dir.join("summary.csv");
            write_csv(&p, &rows)?;
            p
        }
        EmitFormat::Json => {
            let p = dir.join("summary.json");
            std::fs::write(&p, serde_json::to_vec_pretty(&rows)?)?;
            p
        }
    };
    let curves = dir.join("curves.csv");
    write_curves_csv(&curves, &curve_rows(records))?;
    Ok(vec![summary, curves])
}
