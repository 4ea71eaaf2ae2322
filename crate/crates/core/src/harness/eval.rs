//! `eval`: score predictions against ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_csv, LabelRow, TrackRow, TruthRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Label equals true class.
    Classification,
    /// Each cluster is named after its most frequent true class first.
    Clustering,
    /// Decoded shift equals true shift.
    Tracking,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(EvalMode::Classification),
            "clustering" => Ok(EvalMode::Clustering),
            "tracking" => Ok(EvalMode::Tracking),
            other => Err(Error::InvalidArgument(format!("unknown eval mode `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Classification => "classification",
            EvalMode::Clustering => "clustering",
            EvalMode::Tracking => "tracking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mode: EvalMode,
    pub rows: usize,
    pub errors: usize,
}

impl Metrics {
    pub fn error_rate(&self) -> f64 {
        self.errors as f64 / self.rows as f64
    }

    pub fn agreement_rate(&self) -> f64 {
        1.0 - self.error_rate()
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode {}", self.mode.as_str())?;
        writeln!(f, "rows {}", self.rows)?;
        writeln!(f, "errors {}", self.errors)?;
        writeln!(f, "error_rate {:.6}", self.error_rate())?;
        write!(f, "agreement_rate {:.6}", self.agreement_rate())
    }
}

fn check_lengths(pred: usize, truth: usize) -> Result<()> {
    if pred != truth {
        return Err(Error::InvalidArgument(format!(
            "{pred} prediction rows against {truth} ground-truth rows"
        )));
    }
    if pred == 0 {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    Ok(())
}

/// Classification or cluster-purity error. In clustering mode ties for the
/// majority class go to the smallest class index.
pub fn label_metrics(pred: &[usize], truth: &[usize], mode: EvalMode) -> Result<Metrics> {
    check_lengths(pred.len(), truth.len())?;
    let errors = match mode {
        EvalMode::Classification => pred.iter().zip(truth).filter(|(p, t)| p != t).count(),
        EvalMode::Clustering => {
            let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
            for (&p, &t) in pred.iter().zip(truth) {
                *counts.entry(p).or_default().entry(t).or_default() += 1;
            }
            counts
                .values()
                .map(|by_class| {
                    let total: usize = by_class.values().sum();
                    let majority = by_class.values().copied().max().unwrap_or(0);
                    total - majority
                })
                .sum()
        }
        EvalMode::Tracking => {
            return Err(Error::InvalidArgument("tracking compares shifts, not labels".into()));
        }
    };
    Ok(Metrics {
        mode,
        rows: pred.len(),
        errors,
    })
}

pub fn track_metrics(pred: &[(i64, i64)], truth: &[(i64, i64)]) -> Result<Metrics> {
    check_lengths(pred.len(), truth.len())?;
    Ok(Metrics {
        mode: EvalMode::Tracking,
        rows: pred.len(),
        errors: pred.iter().zip(truth).filter(|(p, t)| p != t).count(),
    })
}

fn check_order(pred: impl Iterator<Item = usize>, truth: &[TruthRow]) -> Result<()> {
    for (i, (p, t)) in pred.zip(truth).enumerate() {
        if p != t.t {
            return Err(Error::InvalidArgument(format!(
                "row {i}: prediction index {p} does not match ground-truth index {}",
                t.t
            )));
        }
    }
    Ok(())
}

/// Reads a label or track CSV and a truth CSV and scores them row by row.
pub fn cmd_eval(predictions: &Path, truth: &Path, mode: EvalMode) -> Result<Metrics> {
    let truth: Vec<TruthRow> = read_csv(truth)?;
    match mode {
        EvalMode::Tracking => {
            let pred: Vec<TrackRow> = read_csv(predictions)?;
            check_lengths(pred.len(), truth.len())?;
            check_order(pred.iter().map(|r| r.t), &truth)?;
            let p: Vec<(i64, i64)> = pred.iter().map(|r| (r.shift_v, r.shift_h)).collect();
            let t: Vec<(i64, i64)> = truth.iter().map(|r| (r.shift_v, r.shift_h)).collect();
            track_metrics(&p, &t)
        }
        _ => {
            let pred: Vec<LabelRow> = read_csv(predictions)?;
            check_lengths(pred.len(), truth.len())?;
            check_order(pred.iter().map(|r| r.index), &truth)?;
            let p: Vec<usize> = pred.iter().map(|r| r.label).collect();
            let t: Vec<usize> = truth.iter().map(|r| r.class).collect();
            label_metrics(&p, &t, mode)
        }
    }
}
