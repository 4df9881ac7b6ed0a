//! Reusable pipeline steps shared by the commands, examples and tests.

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{impute_with, split_ranges, ImputeOptions, SplitFractions, TimeSeriesPanel};
use crate::graph::{build_adjacency, knn_candidates, DistanceProvider, KernelConfig, SensorGraph, SensorMeta};
use crate::partition::{add_overlap_nodes, extract_subgraphs, partition_graph, PartitionAssignment, SubgraphBundle};
use crate::training::{prepare_partition, PartitionData, TrainingConfig};

/// Which features the model reads and predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    SpeedOnly,
    FlowOnly,
    Multioutput,
}

impl Mode {
    pub fn features(self) -> Vec<String> {
        match self {
            Mode::SpeedOnly => vec!["speed".into()],
            Mode::FlowOnly => vec!["flow".into()],
            Mode::Multioutput => vec!["speed".into(), "flow".into()],
        }
    }

    /// Copy of `config` with feature lists and model dims set for this mode.
    pub fn apply(self, config: &TrainingConfig) -> TrainingConfig {
        let f = self.features();
        let mut c = config.clone();
        c.model.input_dim = f.len();
        c.model.output_dim = f.len();
        c.input_features = f.clone();
        c.output_features = f;
        c
    }
}

/// kNN candidate pairs, then the thresholded Gaussian kernel.
pub fn build_graph(
    meta: &[SensorMeta],
    k_nn: usize,
    kernel: KernelConfig,
    provider: &dyn DistanceProvider,
) -> Result<SensorGraph, CliError> {
    if meta.len() < 2 {
        return Err(CliError::Data(format!("need at least 2 sensors, got {}", meta.len())));
    }
    let pairs = knn_candidates(meta, k_nn.clamp(1, meta.len() - 1))?;
    Ok(build_adjacency(meta, &pairs, provider, kernel)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitioned {
    pub assignment: PartitionAssignment,
    pub bundles: Vec<SubgraphBundle>,
}

/// Partition, select halos per part, and extract the local subgraphs.
/// `halos = (horizon_k, d_prime)`; `None` disables halos.
pub fn build_bundles(
    graph: &SensorGraph,
    k: usize,
    imbalance: f64,
    seed: u64,
    halos: Option<(usize, f64)>,
    provider: &dyn DistanceProvider,
) -> Result<Partitioned, CliError> {
    let assignment = partition_graph(graph, k, imbalance, seed)?;
    let halo_lists = (0..k)
        .map(|p| match halos {
            Some((horizon_k, d_prime)) if k > 1 => add_overlap_nodes(&assignment, p, horizon_k, d_prime, provider),
            _ => Ok(Vec::new()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bundles = extract_subgraphs(graph, &assignment, &halo_lists)?;
    Ok(Partitioned { assignment, bundles })
}

/// Imputes with statistics pooled over the training span, then prepares
/// one [`PartitionData`] per bundle.
pub fn prepare_all(
    panel: &TimeSeriesPanel,
    bundles: &[SubgraphBundle],
    config: &TrainingConfig,
    fractions: SplitFractions,
    impute: &ImputeOptions,
) -> Result<Vec<PartitionData>, CliError> {
    let m = config.model;
    let [train, _, _] = split_ranges(panel.n_times(), fractions, m.look_back + m.horizon)?;
    let opts = ImputeOptions {
        reference: impute.reference.clone().or(Some(train)),
        ..impute.clone()
    };
    let filled = impute_with(panel, &opts)?;
    bundles
        .iter()
        .map(|b| prepare_partition(&filled, b, config, fractions).map_err(CliError::from))
        .collect()
}
