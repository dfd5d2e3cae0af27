use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TELEMETRY_HEADER: &str = "epoch,group,grad_norm_preclip,clip_rate,d_loss,g_loss";

/// Per-epoch summary. Group-indexed arrays hold group 0 then group 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean discriminator gradient norm on real single-group batches, before clipping.
    pub grad_norm: [f64; 2],
    /// Fraction of that group's real steps where clipping fired.
    pub clip_rate: [f64; 2],
    /// Mean real-batch discriminator loss.
    pub d_loss: [f64; 2],
    pub d_fake_loss: f64,
    pub g_loss: f64,
    /// Real steps taken per group (zero for mixed batches).
    pub real_steps: [usize; 2],
}

impl EpochRecord {
    pub fn grad_gap(&self) -> f64 {
        (self.grad_norm[0] - self.grad_norm[1]).abs()
    }
}

/// One discriminator update on real samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealStepRecord {
    pub epoch: usize,
    /// `None` when the batch mixed both groups.
    pub group: Option<u8>,
    pub pre_norm: f64,
    pub post_norm: f64,
    pub clipped: bool,
    pub scale: f64,
    /// Cosine between the gradient before and after clipping.
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub epochs: Vec<EpochRecord>,
    pub real_steps: Vec<RealStepRecord>,
    /// Seconds per epoch. Kept out of the CSV so that file is reproducible.
    pub wall_clock: Vec<f64>,
    /// Share of generated samples per group, filled in after an audit.
    pub group_frequencies: Option<[f64; 2]>,
}

impl RunTelemetry {
    pub fn grad_norm_series(&self, group: u8) -> Vec<f64> {
        self.epochs.iter().map(|e| e.grad_norm[group as usize]).collect()
    }

    pub fn gap_series(&self) -> Vec<f64> {
        self.epochs.iter().map(EpochRecord::grad_gap).collect()
    }

    /// Mean per-group gradient-norm gap over the first and last quarter of
    /// epochs (at least one epoch each).
    pub fn quarter_gaps(&self) -> Option<(f64, f64)> {
        let gaps = self.gap_series();
        if gaps.is_empty() {
            return None;
        }
        let q = (gaps.len() / 4).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&gaps[..q]), mean(&gaps[gaps.len() - q..])))
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.epochs.last().map(EpochRecord::grad_gap)
    }

    pub fn set_frequencies(&mut self, freq: [f64; 2]) -> Result<()> {
        if ((freq[0] + freq[1]) - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("frequencies {freq:?} do not sum to 1")));
        }
        self.group_frequencies = Some(freq);
        Ok(())
    }

    /// Two rows per epoch, one per group.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(TELEMETRY_HEADER);
        out.push('\n');
        for e in &self.epochs {
            for g in 0..2 {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    e.epoch, g, e.grad_norm[g], e.clip_rate[g], e.d_loss[g], e.g_loss
                )
                .expect("writing to a String");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Row of a telemetry CSV as read back for charting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TelemetryRow {
    pub epoch: usize,
    pub group: u8,
    pub grad_norm_preclip: f64,
    pub clip_rate: f64,
    pub d_loss: f64,
    pub g_loss: f64,
}

pub fn read_telemetry_csv(path: &Path) -> Result<Vec<TelemetryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, n0: f64, n1: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            grad_norm: [n0, n1],
            clip_rate: [0.0, 0.5],
            d_loss: [0.7, 0.6],
            d_fake_loss: 0.7,
            g_loss: 0.69,
            real_steps: [2, 2],
        }
    }

    #[test]
    fn csv_layout() {
        let t = RunTelemetry {
            epochs: vec![rec(0, 1.0, 1.5)],
            ..Default::default()
        };
        let s = t.to_csv_string();
        assert_eq!(
            s,
            "epoch,group,grad_norm_preclip,clip_rate,d_loss,g_loss\n0,0,1,0,0.7,0.69\n0,1,1.5,0.5,0.6,0.69\n"
        );
    }

    #[test]
    fn csv_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = RunTelemetry {
            epochs: vec![rec(0, 1.0, 1.5), rec(1, 0.1, 0.3)],
            ..Default::default()
        };
        t.write_csv(&p).unwrap();
        let rows = read_telemetry_csv(&p).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].grad_norm_preclip, 0.3);
    }

    #[test]
    fn quarter_gaps_use_first_and_last_quarter() {
        let t = RunTelemetry {
            epochs: (0..8).map(|e| rec(e, 1.0, 1.0 + e as f64)).collect(),
            ..Default::default()
        };
        let (first, last) = t.quarter_gaps().unwrap();
        assert_eq!(first, 0.5);
        assert_eq!(last, 6.5);
        assert!(RunTelemetry::default().quarter_gaps().is_none());
    }

    #[test]
    fn frequencies_must_sum_to_one() {
        let mut t = RunTelemetry::default();
        assert!(t.set_frequencies([0.6, 0.4]).is_ok());
        assert!(t.set_frequencies([0.6, 0.5]).is_err());
    }
}
