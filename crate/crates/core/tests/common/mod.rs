#![allow(dead_code)]

use traffic_dcrnn::cli::{build_bundles, build_graph, prepare_all, Partitioned};
use traffic_dcrnn::data::{generate_synthetic, ImputeOptions, SplitFractions, SyntheticData, SyntheticScenario};
use traffic_dcrnn::graph::{HaversineProvider, KernelConfig, SensorGraph};
use traffic_dcrnn::training::{PartitionData, TrainingConfig};

pub struct Network {
    pub synth: SyntheticData,
    pub graph: SensorGraph,
    pub provider: HaversineProvider,
}

/// Synthetic corridors with an 8-NN Gaussian-kernel graph.
pub fn network(scenario: &SyntheticScenario) -> Network {
    let synth = generate_synthetic(scenario);
    let provider = HaversineProvider::new(&synth.meta);
    let graph = build_graph(&synth.meta, 8, KernelConfig::default(), &provider).unwrap();
    Network { synth, graph, provider }
}

impl Network {
    pub fn bundles(&self, k: usize, halos: Option<(usize, f64)>) -> Partitioned {
        build_bundles(&self.graph, k, 0.05, 0, halos, &self.provider).unwrap()
    }

    pub fn prepare(&self, parted: &Partitioned, config: &TrainingConfig) -> Vec<PartitionData> {
        prepare_all(
            &self.synth.panel,
            &parted.bundles,
            config,
            SplitFractions::default(),
            &ImputeOptions::default(),
        )
        .unwrap()
    }
}
