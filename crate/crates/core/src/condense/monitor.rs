use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorRecord {
    pub iter: usize,
    pub outer_loss: f64,
    /// `‖(S_before − S_after) / η_t‖²`.
    pub grad_mapping_sq: f64,
    pub sum_s: f64,
    pub eta: f64,
    /// Wall-clock spent updating the probabilities (estimator, step and
    /// projection), excluding model work.
    pub data_update: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceMonitor {
    records: Vec<MonitorRecord>,
}

impl ConvergenceMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MonitorRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[MonitorRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Running average of `‖Ĝᵗ‖²` after each iteration.
    pub fn running_average(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.records
            .iter()
            .enumerate()
            .map(|(t, r)| {
                acc += r.grad_mapping_sq;
                acc / (t + 1) as f64
            })
            .collect()
    }

    /// Mean `‖Ĝᵗ‖²` over the first and the second half of the iterations.
    pub fn half_means(&self) -> (f64, f64) {
        let mid = self.records.len() / 2;
        let mean = |rs: &[MonitorRecord]| {
            if rs.is_empty() {
                0.0
            } else {
                rs.iter().map(|r| r.grad_mapping_sq).sum::<f64>() / rs.len() as f64
            }
        };
        (mean(&self.records[..mid]), mean(&self.records[mid..]))
    }

    pub fn total_data_update(&self) -> Duration {
        self.records.iter().map(|r| r.data_update).sum()
    }

    pub fn max_sum_s(&self) -> f64 {
        self.records.iter().map(|r| r.sum_s).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `iter,outer_loss,grad_mapping_sq,sum_s,eta`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "iter,outer_loss,grad_mapping_sq,sum_s,eta")?;
            for r in &self.records {
                writeln!(w, "{},{},{},{},{}", r.iter, r.outer_loss, r.grad_mapping_sq, r.sum_s, r.eta)?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}
