use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{FairnessReport, QualityReport};
use crate::trainer::RunTelemetry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Vanilla,
    Repfair,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Repfair => "repfair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, detail: String },
}

/// Everything kept from one (sweep point, seed, trainer) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trainer: TrainerKind,
    /// C or ratio of the sweep point, if any.
    pub point: Option<f64>,
    pub seed: u64,
    pub status: RunStatus,
    pub report: Option<FairnessReport>,
    pub quality: Option<QualityReport>,
    pub degenerate: bool,
    pub telemetry: RunTelemetry,
}

impl RunOutcome {
    pub fn final_grad_gap(&self) -> Option<f64> {
        self.telemetry.final_gap()
    }
}

/// Summary of all seeds at one sweep point for one trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub trainer: TrainerKind,
    pub axis: String,
    pub value: Option<f64>,
    pub runs: usize,
    pub completed: usize,
    pub diverged: usize,
    pub degenerate: usize,
    pub kl_median: Option<f64>,
    pub kl_min: Option<f64>,
    pub kl_max: Option<f64>,
    pub kl_mean: Option<f64>,
    pub freq0_mean: Option<f64>,
    pub freq1_mean: Option<f64>,
    /// Median of `|p0 − p1|` over completed runs.
    pub freq_gap_median: Option<f64>,
    pub grad_gap_mean: Option<f64>,
    pub quality_median: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Reduces the runs of one (trainer, point) cell. Runs are sorted by seed
/// first so the result does not depend on their order.
pub fn aggregate_runs(trainer: TrainerKind, axis: &str, value: Option<f64>, runs: &[&RunOutcome]) -> AggregateRow {
    let mut runs = runs.to_vec();
    runs.sort_by_key(|r| r.seed);
    let reports: Vec<&FairnessReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
    let kl: Vec<f64> = reports.iter().map(|r| r.kl_to_uniform).collect();
    let f0: Vec<f64> = reports.iter().map(|r| r.frequencies[0]).collect();
    let f1: Vec<f64> = reports.iter().map(|r| r.frequencies[1]).collect();
    let gaps: Vec<f64> = reports.iter().map(|r| r.frequency_gap()).collect();
    let grad_gaps: Vec<f64> = runs
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .filter_map(|r| r.final_grad_gap())
        .collect();
    let quality: Vec<f64> = runs.iter().filter_map(|r| r.quality.map(|q| q.pooled)).collect();
    AggregateRow {
        trainer,
        axis: axis.to_string(),
        value,
        runs: runs.len(),
        completed: runs.iter().filter(|r| r.status == RunStatus::Completed).count(),
        diverged: runs.iter().filter(|r| matches!(r.status, RunStatus::Diverged { .. })).count(),
        degenerate: runs.iter().filter(|r| r.degenerate).count(),
        kl_median: median(&kl),
        kl_min: kl.iter().copied().reduce(f64::min),
        kl_max: kl.iter().copied().reduce(f64::max),
        kl_mean: mean(&kl),
        freq0_mean: mean(&f0),
        freq1_mean: mean(&f1),
        freq_gap_median: median(&gaps),
        grad_gap_mean: mean(&grad_gaps),
        quality_median: median(&quality),
    }
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Vanilla and clipped trainers on the same data and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub vanilla: AggregateRow,
    pub repfair: AggregateRow,
    /// `gap_vanilla − gap_repfair` on median frequency gaps.
    pub freq_gap_reduction: Option<f64>,
    pub kl_median_delta: Option<f64>,
}

impl PairedSummary {
    pub fn new(vanilla: AggregateRow, repfair: AggregateRow) -> Self {
        let diff = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
        Self {
            freq_gap_reduction: diff(vanilla.freq_gap_median, repfair.freq_gap_median),
            kl_median_delta: diff(vanilla.kl_median, repfair.kl_median),
            vanilla,
            repfair,
        }
    }
}
