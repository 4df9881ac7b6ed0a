use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainError, TrainingConfig};
use crate::data::FeatureScaler;
use crate::graph::{GraphFile, SensorGraph};
use crate::model::DcgruParams;
use crate::numcore::DenseTensor;
use crate::partition::SubgraphBundle;

const FORMAT: &str = "traffic-dcrnn/checkpoint";

/// Everything needed for standalone inference on one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub part: usize,
    pub config: TrainingConfig,
    pub params: BTreeMap<String, DenseTensor>,
    pub scaler: FeatureScaler,
    /// Local node order: owned nodes, then halos.
    pub sensor_ids: Vec<String>,
    pub global_nodes: Vec<usize>,
    pub halo: Vec<bool>,
    graph: GraphFile,
    pub iteration: u64,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn new(
        config: &TrainingConfig,
        params: &DcgruParams,
        scaler: &FeatureScaler,
        bundle: &SubgraphBundle,
        iteration: u64,
        best_epoch: usize,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: 1,
            part: bundle.part,
            config: config.clone(),
            params: params.to_map(),
            scaler: scaler.clone(),
            sensor_ids: bundle.graph.sensor_ids().to_vec(),
            global_nodes: bundle.global_nodes.clone(),
            halo: bundle.halo.clone(),
            graph: GraphFile::from_graph(&bundle.graph),
            iteration,
            best_epoch,
        }
    }

    pub fn model_params(&self) -> Result<DcgruParams, TrainError> {
        Ok(DcgruParams::from_map(&self.config.model, &self.params)?)
    }

    pub fn graph(&self) -> Result<SensorGraph, TrainError> {
        Ok(self.graph.clone().into_graph()?)
    }

    pub fn bundle(&self) -> Result<SubgraphBundle, TrainError> {
        Ok(SubgraphBundle {
            part: self.part,
            global_nodes: self.global_nodes.clone(),
            halo: self.halo.clone(),
            graph: self.graph()?,
        })
    }

    /// Scaler column of each configured input feature.
    pub fn input_columns(&self) -> Result<Vec<usize>, TrainError> {
        columns(&self.scaler, &self.config.input_features)
    }

    pub fn output_columns(&self) -> Result<Vec<usize>, TrainError> {
        columns(&self.scaler, &self.config.output_features)
    }
}

pub(crate) fn columns(scaler: &FeatureScaler, names: &[String]) -> Result<Vec<usize>, TrainError> {
    names
        .iter()
        .map(|n| {
            scaler
                .feature_names
                .iter()
                .position(|f| f == n)
                .ok_or_else(|| TrainError::Config(format!("unknown feature {n:?}")))
        })
        .collect()
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let text = serde_json::to_string(ckpt).map_err(|e| TrainError::Io(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| TrainError::Io(format!("{}: bad checkpoint: {e}", path.display())))?;
    if ckpt.format != FORMAT {
        return Err(TrainError::Io(format!("{}: unexpected format {:?}", path.display(), ckpt.format)));
    }
    ckpt.model_params()?;
    Ok(ckpt)
}
