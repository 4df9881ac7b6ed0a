use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalReport, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub partition: usize,
    /// Epoch 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub epsilon: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub part: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub wall_seconds: f64,
    pub iterations: u64,
    pub stopped_early: bool,
    /// Filled in by evaluation on held-out windows.
    pub test: Option<EvalReport>,
}

impl TrainReport {
    pub fn initial_valid_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.valid_loss)
    }
}

/// Aggregate over partitions; training time is the slowest partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub partitions: usize,
    pub max_wall_seconds: f64,
    pub total_wall_seconds: f64,
    pub best_valid_loss: Vec<f64>,
    pub test_mae: Vec<Option<f64>>,
    pub failures: Vec<(usize, String)>,
}

impl TrainSummary {
    pub fn from_reports(reports: &[TrainReport], failures: Vec<(usize, String)>) -> Self {
        Self {
            partitions: reports.len() + failures.len(),
            max_wall_seconds: reports.iter().map(|r| r.wall_seconds).fold(0.0, f64::max),
            total_wall_seconds: reports.iter().map(|r| r.wall_seconds).sum(),
            best_valid_loss: reports.iter().map(|r| r.best_valid_loss).collect(),
            test_mae: reports.iter().map(|r| r.test.as_ref().map(|t| t.mean_mae[0])).collect(),
            failures,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::Io(format!("{}: {e}", path.display()))
}

/// `partition,epoch,train_loss,valid_loss,lr,epsilon,seconds`.
pub fn write_epoch_csv(path: &Path, reports: &[TrainReport]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in reports {
        for e in &r.epochs {
            w.serialize(e).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_epoch_csv(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

pub fn write_summary_json(path: &Path, summary: &TrainSummary) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(part: usize, wall: f64) -> TrainReport {
        TrainReport {
            part,
            epochs: vec![EpochRecord {
                partition: part,
                epoch: 0,
                train_loss: 1.0,
                valid_loss: 2.0,
                lr: 0.01,
                epsilon: 1.0,
                seconds: 0.0,
            }],
            best_epoch: 0,
            best_valid_loss: 2.0,
            wall_seconds: wall,
            iterations: 0,
            stopped_early: false,
            test: None,
        }
    }

    #[test]
    fn csv_round_trip_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("epochs.csv");
        let reports = vec![report(0, 3.0), report(1, 5.0)];
        write_epoch_csv(&p, &reports).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("partition,epoch,train_loss,valid_loss,lr,epsilon,seconds\n"));
        assert_eq!(read_epoch_csv(&p).unwrap().len(), 2);
        let s = TrainSummary::from_reports(&reports, vec![(2, "boom".into())]);
        assert_eq!(s.max_wall_seconds, 5.0);
        assert_eq!(s.partitions, 3);
        assert_eq!(TrainSummary::from_reports(&[], Vec::new()).partitions, 0);
    }
}
