//! Multilevel k-way partitioning of the sensor graph (heavy-edge coarsening,
//! recursive-bisection initial partition, FM refinement while uncoarsening),
//! halo augmentation, and per-part subgraph extraction.
//!
//! Partitioning works on the symmetrized weights; the extracted subgraphs keep
//! the original directed adjacency.

mod coarsen;
mod initial;
mod io;
mod overlap;
mod refine;
mod wgraph;

use std::collections::HashMap;

use crate::graph::{GraphError, SensorGraph};
use crate::numcore::SparseMatrix;

pub use coarsen::{coarsen, match_heavy_edges, CoarseLevel};
pub use initial::initial_partition;
pub use io::{read_assignment_csv, read_bundles, write_assignment_csv, write_bundles};
pub use overlap::add_overlap_nodes;
pub use refine::{fm_pass, max_part_weight, rebalance, refine_uncoarsen, refine_uncoarsen_traced, PassRecord};
pub use wgraph::WeightedGraph;

pub const DEFAULT_IMBALANCE: f64 = 0.05;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("k exceeds nodes (k = {k}, nodes = {nodes})")]
    KExceedsNodes { k: usize, nodes: usize },
    #[error("invalid part count {0}")]
    InvalidK(usize),
    #[error("inconsistent partition data: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io error: {0}")]
    Io(String),
}

/// Node → part map with `k` parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionAssignment {
    part_of: Vec<usize>,
    k: usize,
}

impl PartitionAssignment {
    pub fn new(part_of: Vec<usize>, k: usize) -> Self {
        assert!(part_of.iter().all(|&p| p < k), "part id out of range");
        Self { part_of, k }
    }

    pub fn part_of(&self) -> &[usize] {
        &self.part_of
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn members(&self, part: usize) -> Vec<usize> {
        (0..self.part_of.len()).filter(|&v| self.part_of[v] == part).collect()
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &p in &self.part_of {
            sizes[p] += 1;
        }
        sizes
    }
}

/// `w'(i,j) = w'(j,i) = w(i,j) + w(j,i)`.
pub fn symmetrize(graph: &SensorGraph) -> SensorGraph {
    let n = graph.n_nodes();
    let triples = graph
        .adjacency()
        .triples()
        .flat_map(|(i, j, w)| [(i, j, w), (j, i, w)]);
    let adjacency = SparseMatrix::from_triples(n, n, triples).expect("same shape as the input");
    SensorGraph::new(graph.sensor_ids().to_vec(), adjacency, graph.kernel_sigma(), graph.kernel())
        .expect("ids unchanged")
}

/// Cut weight on the symmetrized graph, each undirected edge counted once.
pub fn edge_cut(graph: &SensorGraph, assignment: &PartitionAssignment) -> f64 {
    WeightedGraph::from_sensor_graph(graph).cut(assignment.part_of())
}

/// Coarsening stops at this many nodes (or fewer).
pub fn default_min_size(k: usize) -> usize {
    20.max(4 * k)
}

/// Symmetrize → coarsen → initial partition → refine while uncoarsening.
pub fn partition_graph(
    graph: &SensorGraph,
    k: usize,
    imbalance: f64,
    seed: u64,
) -> Result<PartitionAssignment, PartitionError> {
    partition_graph_traced(graph, k, imbalance, seed).map(|(a, _)| a)
}

/// [`partition_graph`] plus the cut before/after every refinement pass.
pub fn partition_graph_traced(
    graph: &SensorGraph,
    k: usize,
    imbalance: f64,
    seed: u64,
) -> Result<(PartitionAssignment, Vec<PassRecord>), PartitionError> {
    let n = graph.n_nodes();
    if k == 0 {
        return Err(PartitionError::InvalidK(k));
    }
    if k > n {
        return Err(PartitionError::KExceedsNodes { k, nodes: n });
    }
    let fine = WeightedGraph::from_sensor_graph(graph);
    if k == 1 {
        return Ok((PartitionAssignment::new(vec![0; n], 1), Vec::new()));
    }
    let levels = coarsen(&fine, default_min_size(k), seed);
    let coarsest = levels.last().map(|l| &l.graph).unwrap_or(&fine);
    let initial = initial_partition(coarsest, k, seed.wrapping_add(1))?;
    Ok(refine_uncoarsen_traced(&fine, &levels, &initial, imbalance))
}

/// One part's local graph with index maps and halo flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphBundle {
    pub part: usize,
    /// Global node index of each local node: owned nodes ascending, then halos
    /// in selection order.
    pub global_nodes: Vec<usize>,
    pub halo: Vec<bool>,
    /// Full-graph adjacency restricted to the local nodes.
    pub graph: SensorGraph,
}

impl SubgraphBundle {
    pub fn n_local(&self) -> usize {
        self.global_nodes.len()
    }

    pub fn local_of(&self, global: usize) -> Option<usize> {
        self.global_nodes.iter().position(|&g| g == global)
    }

    pub fn global_to_local(&self) -> HashMap<usize, usize> {
        self.global_nodes.iter().enumerate().map(|(l, &g)| (g, l)).collect()
    }

    /// Local indices of nodes owned by this part.
    pub fn owned_local(&self) -> Vec<usize> {
        (0..self.n_local()).filter(|&l| !self.halo[l]).collect()
    }

    pub fn n_halo(&self) -> usize {
        self.halo.iter().filter(|&&h| h).count()
    }
}

/// Builds one bundle per part from the assignment and each part's halo list.
pub fn extract_subgraphs(
    graph: &SensorGraph,
    assignment: &PartitionAssignment,
    halos: &[Vec<usize>],
) -> Result<Vec<SubgraphBundle>, PartitionError> {
    if assignment.part_of().len() != graph.n_nodes() {
        return Err(PartitionError::Inconsistent(format!(
            "assignment covers {} nodes, graph has {}",
            assignment.part_of().len(),
            graph.n_nodes()
        )));
    }
    if halos.len() != assignment.k() {
        return Err(PartitionError::Inconsistent(format!(
            "{} halo lists for {} parts",
            halos.len(),
            assignment.k()
        )));
    }
    let mut bundles = Vec::with_capacity(assignment.k());
    for (part, part_halos) in halos.iter().enumerate() {
        let mut global_nodes = assignment.members(part);
        let owned = global_nodes.len();
        for &h in part_halos {
            if h >= graph.n_nodes() || assignment.part_of()[h] == part || global_nodes[owned..].contains(&h) {
                return Err(PartitionError::Inconsistent(format!("bad halo node {h} for part {part}")));
            }
            global_nodes.push(h);
        }
        let halo = (0..global_nodes.len()).map(|l| l >= owned).collect();
        let local = graph.induced(&global_nodes);
        bundles.push(SubgraphBundle {
            part,
            global_nodes,
            halo,
            graph: local,
        });
    }
    Ok(bundles)
}
