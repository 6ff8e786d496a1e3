//! JSONL and CSV emitters for experiment results. Floats are written in
//! shortest round-trip form and missing statistics as empty cells, so
//! identical results always give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::attack::AttackSummary;
use crate::error::{Error, Result};
use crate::evasion::SweepReport;
use crate::leakage::ClassPrecision;
use crate::transforms::{CurvePoint, GridCell};

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    label: &'a str,
    attempts: usize,
    successes: usize,
    sr: f64,
    l2_mean: Option<f64>,
    l2_std: Option<f64>,
    linf_mean: Option<f64>,
    linf_std: Option<f64>,
    ssim_mean: Option<f64>,
    ssim_std: Option<f64>,
    steps_mean: Option<f64>,
    steps_std: Option<f64>,
    pixels_mean: Option<f64>,
    pixels_std: Option<f64>,
}

impl<'a> SummaryRow<'a> {
    fn new(label: &'a str, s: &AttackSummary) -> Self {
        Self {
            label,
            attempts: s.attempts,
            successes: s.successes,
            sr: s.sr,
            l2_mean: s.l2_mean,
            l2_std: s.l2_std,
            linf_mean: s.linf_mean,
            linf_std: s.linf_std,
            ssim_mean: s.ssim_mean,
            ssim_std: s.ssim_std,
            steps_mean: s.steps_mean,
            steps_std: s.steps_std,
            pixels_mean: s.pixels_mean,
            pixels_std: s.pixels_std,
        }
    }
}

/// One row per labelled attack summary (collision or evasion tables).
pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[(&str, &AttackSummary)]) -> Result<()> {
    write_csv(path, rows.iter().map(|(label, s)| SummaryRow::new(label, s)))
}

#[derive(Serialize)]
struct SweepCsvRow {
    delta0: f64,
    sr: f64,
    l2_mean: Option<f64>,
    linf_mean: Option<f64>,
    ssim_mean: Option<f64>,
    steps_mean: Option<f64>,
    l2_ratio: Option<f64>,
    linf_ratio: Option<f64>,
    ssim_ratio: Option<f64>,
    steps_ratio: Option<f64>,
}

/// Absolute metrics per δ₀ plus their ratios to the δ₀ = 0 row.
pub fn write_sweep_csv(path: impl AsRef<Path>, report: &SweepReport) -> Result<()> {
    write_csv(
        path,
        report.rows.iter().map(|r| SweepCsvRow {
            delta0: r.delta0,
            sr: r.summary.sr,
            l2_mean: r.summary.l2_mean,
            linf_mean: r.summary.linf_mean,
            ssim_mean: r.summary.ssim_mean,
            steps_mean: r.summary.steps_mean,
            l2_ratio: r.l2_ratio,
            linf_ratio: r.linf_ratio,
            ssim_ratio: r.ssim_ratio,
            steps_ratio: r.steps_ratio,
        }),
    )
}

pub fn write_curves_csv(path: impl AsRef<Path>, curves: &[CurvePoint]) -> Result<()> {
    write_csv(path, curves)
}

pub fn write_grid_csv(path: impl AsRef<Path>, cells: &[GridCell]) -> Result<()> {
    write_csv(path, cells)
}

pub fn write_precision_csv(path: impl AsRef<Path>, classes: &[ClassPrecision]) -> Result<()> {
    write_csv(path, classes)
}
