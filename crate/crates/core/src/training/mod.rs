//! Per-partition training, multi-partition orchestration, checkpoints and
//! inference.

mod checkpoint;
mod infer;
mod report;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::graph::GraphError;
use crate::model::{ModelError, Seq2SeqConfig, DEFAULT_TAU};
use crate::numcore::NumError;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use infer::{evaluate, forecast, EvalReport, Forecaster, HorizonMae, NodeMae};
pub use report::{read_epoch_csv, write_epoch_csv, write_summary_json, EpochRecord, TrainReport, TrainSummary};
pub use trainer::{prepare_partition, train_all, train_partition, PartitionData, PartitionOutcome};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("numerical divergence in partition {part} at epoch {epoch}, iteration {iteration}: {message}")]
    Divergence {
        part: usize,
        epoch: usize,
        iteration: u64,
        message: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mae,
    /// Sum of per-feature MAEs; equals [`LossKind::Mae`] for one output.
    #[default]
    MaeMulti,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub model: Seq2SeqConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Epochs after which the rate is multiplied by `lr_decay`; empty means
    /// 60% and 80% of `epochs`.
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub patience: usize,
    pub max_grad_norm: f64,
    pub tau: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Step between training window starts.
    pub train_stride: usize,
    pub input_features: Vec<String>,
    pub output_features: Vec<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            model: Seq2SeqConfig::default(),
            batch_size: 64,
            learning_rate: 0.01,
            lr_decay: 0.1,
            milestones: Vec::new(),
            epochs: 100,
            patience: 10,
            max_grad_norm: 5.0,
            tau: DEFAULT_TAU,
            seed: 0,
            loss: LossKind::MaeMulti,
            train_stride: 1,
            input_features: vec!["speed".into()],
            output_features: vec!["speed".into()],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 || self.train_stride == 0 {
            return bad("batch_size, epochs, patience and train_stride must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.lr_decay > 0.0) || !(self.max_grad_norm > 0.0) || !(self.tau > 0.0) {
            return bad("learning_rate ≥ 0 and lr_decay, max_grad_norm, tau > 0 required".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        if self.input_features.len() != self.model.input_dim || self.output_features.len() != self.model.output_dim {
            return bad(format!(
                "{} input / {} output features for input_dim {} / output_dim {}",
                self.input_features.len(),
                self.output_features.len(),
                self.model.input_dim,
                self.model.output_dim
            ));
        }
        Ok(())
    }

    pub fn effective_milestones(&self) -> Vec<usize> {
        if !self.milestones.is_empty() {
            return self.milestones.clone();
        }
        let a = (self.epochs * 6 / 10).max(1);
        let b = (self.epochs * 8 / 10).max(a + 1);
        vec![a, b]
    }

    /// Rate used during 1-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.effective_milestones().iter().filter(|&&m| m < epoch).count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let c = TrainingConfig {
            epochs: 50,
            ..TrainingConfig::default()
        };
        assert_eq!(c.effective_milestones(), vec![30, 40]);
        assert_eq!(c.learning_rate_at(30), 0.01);
        assert!((c.learning_rate_at(31) - 0.001).abs() < 1e-15);
        assert!((c.learning_rate_at(41) - 0.0001).abs() < 1e-16);
    }

    #[test]
    fn validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let c = TrainingConfig {
            milestones: vec![5, 5],
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainingConfig {
            output_features: vec!["speed".into(), "flow".into()],
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
