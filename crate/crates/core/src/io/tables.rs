//! CSV exports: ground truth, tracks, per-datum labels and EM traces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::StepReport;
use crate::synth::GroundTruth;
use crate::thmm::TrackPoint;
use crate::transform::ShiftGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub t: usize,
    pub class: usize,
    pub transform: usize,
    pub shift_v: i64,
    pub shift_h: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub t: usize,
    pub class: usize,
    /// Grid cell `(i, j)` with `ℓ = i·cols + j`.
    pub i: usize,
    pub j: usize,
    pub shift_v: i64,
    pub shift_h: i64,
    pub log_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub index: usize,
    pub label: usize,
    pub transform: usize,
    pub log_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub restart: usize,
    /// `tmg`, `tca`, `mtca` or `thmm`; a THMM run lists its TMG warm-up first.
    pub stage: String,
    pub iteration: usize,
    pub loglik: f64,
    pub min_mass: f64,
    pub rescued: usize,
}

pub fn truth_rows(truth: &GroundTruth) -> Vec<TruthRow> {
    (0..truth.len())
        .map(|t| TruthRow {
            t,
            class: truth.classes[t],
            transform: truth.transforms[t],
            shift_v: truth.shifts[t].0,
            shift_h: truth.shifts[t].1,
        })
        .collect()
}

pub fn track_rows(track: &[TrackPoint], grid: ShiftGrid) -> Vec<TrackRow> {
    track
        .iter()
        .map(|p| {
            let (i, j) = grid.cell(p.transform);
            TrackRow {
                t: p.t,
                class: p.class,
                i,
                j,
                shift_v: p.shift.0,
                shift_h: p.shift.1,
                log_margin: p.log_margin,
            }
        })
        .collect()
}

pub fn step_rows(restart: usize, stage: &str, reports: &[StepReport]) -> Vec<StepRow> {
    reports
        .iter()
        .map(|r| StepRow {
            restart,
            stage: stage.to_string(),
            iteration: r.iteration,
            loglik: r.loglik,
            min_mass: r.cluster_mass.iter().copied().fold(f64::INFINITY, f64::min),
            rescued: r.rescued.len(),
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Generator parameters as two-column `key,value` CSV.
pub fn write_params(path: &Path, params: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in params {
        w.write_record([k, v])?;
    }
    w.flush()?;
    Ok(())
}
