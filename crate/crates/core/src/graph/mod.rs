//! Sensor graph construction: k-nearest-neighbor candidate pairs ranked by
//! great-circle distance, then a thresholded Gaussian kernel over driving
//! distances.

mod distance;
mod io;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::numcore::SparseMatrix;

pub use distance::{haversine_miles, DistanceProvider, HaversineProvider, RoutingProvider, TableProvider};
pub use io::{read_graph, read_metadata_csv, write_graph, write_metadata_csv};
pub(crate) use io::GraphFile;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("empty graph")]
    EmptyGraph,
    #[error("degenerate kernel width (sigma = 0)")]
    DegenerateKernel,
    #[error("negative distance {value} from node {from} to node {to}")]
    NegativeDistance { from: usize, to: usize, value: f64 },
    #[error("distance provider error: {0}")]
    Provider(String),
    #[error("row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("invalid sensor metadata: {0}")]
    InvalidMeta(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Static description of one sensor location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub sensor_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub district: String,
    pub sensor_type: String,
    pub lane_type: String,
}

impl SensorMeta {
    pub fn new(id: &str, latitude: f64, longitude: f64) -> Self {
        Self {
            sensor_id: id.to_string(),
            latitude,
            longitude,
            district: String::new(),
            sensor_type: String::new(),
            lane_type: String::new(),
        }
    }
}

/// Checks id uniqueness and coordinate ranges.
pub fn validate_meta(meta: &[SensorMeta]) -> Result<(), GraphError> {
    let mut seen = BTreeSet::new();
    for m in meta {
        if !seen.insert(m.sensor_id.as_str()) {
            return Err(GraphError::InvalidMeta(format!("duplicate sensor id {:?}", m.sensor_id)));
        }
        if !(-90.0..=90.0).contains(&m.latitude) || !(-180.0..=180.0).contains(&m.longitude) {
            return Err(GraphError::InvalidMeta(format!(
                "sensor {:?} has invalid coordinates ({}, {})",
                m.sensor_id, m.latitude, m.longitude
            )));
        }
    }
    Ok(())
}

/// Metadata sorted by sensor id; node indices of a graph follow this order.
pub fn canonical_order(meta: &[SensorMeta]) -> Vec<SensorMeta> {
    let mut out = meta.to_vec();
    out.sort_by(|a, b| a.sensor_id.cmp(&b.sensor_id));
    out
}

/// Which quantity the sparsity threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOn {
    /// Keep the edge when `dist² ≤ thresh`.
    #[default]
    DistanceSq,
    /// Keep the edge when `exp(−dist²/σ²) ≥ thresh`.
    Weight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Standard deviation of all queried distances.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub threshold_on: ThresholdOn,
    pub thresh: f64,
    pub sigma: SigmaMode,
    pub self_loops: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            threshold_on: ThresholdOn::DistanceSq,
            thresh: f64::MAX,
            sigma: SigmaMode::Auto,
            self_loops: false,
        }
    }
}

/// Weighted directed graph over sensors. Row `i`, column `j` is the edge
/// `i → j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGraph {
    sensor_ids: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: SparseMatrix,
    kernel_sigma: f64,
    kernel: KernelConfig,
}

impl SensorGraph {
    pub fn new(
        sensor_ids: Vec<String>,
        adjacency: SparseMatrix,
        kernel_sigma: f64,
        kernel: KernelConfig,
    ) -> Result<Self, GraphError> {
        let n = sensor_ids.len();
        if adjacency.rows() != n || adjacency.cols() != n {
            return Err(GraphError::InvalidMeta(format!(
                "adjacency is {}x{} for {n} sensors",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in sensor_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(GraphError::InvalidMeta(format!("duplicate sensor id {id:?}")));
            }
        }
        Ok(Self {
            sensor_ids,
            index,
            adjacency,
            kernel_sigma,
            kernel,
        })
    }

    /// Graph with anonymous ids `"0".."n-1"` from explicit triples; handy for
    /// tests and partitioning-only workflows.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let adjacency = SparseMatrix::from_triples(n, n, edges.iter().copied())
            .map_err(|e| GraphError::InvalidMeta(e.to_string()))?;
        Self::new((0..n).map(|i| i.to_string()).collect(), adjacency, 1.0, KernelConfig::default())
    }

    pub fn n_nodes(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn node_of(&self, sensor_id: &str) -> Option<usize> {
        self.index.get(sensor_id).copied()
    }

    pub fn kernel_sigma(&self) -> f64 {
        self.kernel_sigma
    }

    pub fn kernel(&self) -> KernelConfig {
        self.kernel
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.adjacency.get(from, to)
    }

    /// Subgraph on `nodes` (in that order) keeping every edge between them.
    pub fn induced(&self, nodes: &[usize]) -> SensorGraph {
        let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let mut triples = Vec::new();
        for (l, &g) in nodes.iter().enumerate() {
            let (cols, vals) = self.adjacency.row(g);
            for (c, &w) in cols.iter().zip(vals) {
                if let Some(&lc) = local.get(c) {
                    triples.push((l, lc, w));
                }
            }
        }
        let adjacency = SparseMatrix::from_triples(nodes.len(), nodes.len(), triples)
            .expect("induced entries are in range");
        SensorGraph::new(
            nodes.iter().map(|&g| self.sensor_ids[g].clone()).collect(),
            adjacency,
            self.kernel_sigma,
            self.kernel,
        )
        .expect("induced ids stay unique")
    }
}

/// For each node, its `k` nearest other nodes by great-circle distance
/// (ties broken by ascending node index). Returned pairs are ordered.
pub fn knn_candidates(meta: &[SensorMeta], k: usize) -> Result<BTreeSet<(usize, usize)>, GraphError> {
    if meta.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    assert!(k >= 1, "k must be at least 1");
    validate_meta(meta)?;
    let n = meta.len();
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        let mut ranked: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = haversine_miles(meta[i].latitude, meta[i].longitude, meta[j].latitude, meta[j].longitude);
                (d, j)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pairs.extend(ranked.into_iter().take(k).map(|(_, j)| (i, j)));
    }
    Ok(pairs)
}

/// Gaussian kernel weight `exp(−d²/σ²)`.
pub fn kernel_weight(distance: f64, sigma: f64) -> f64 {
    (-(distance * distance) / (sigma * sigma)).exp()
}

/// Population standard deviation.
pub(crate) fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Thresholded Gaussian-kernel adjacency over the candidate `pairs`.
///
/// Node indices refer to positions in `meta`.
pub fn build_adjacency(
    meta: &[SensorMeta],
    pairs: &BTreeSet<(usize, usize)>,
    provider: &dyn DistanceProvider,
    kernel: KernelConfig,
) -> Result<SensorGraph, GraphError> {
    if meta.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let n = meta.len();
    let mut queried = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i == j && !kernel.self_loops {
            continue;
        }
        if i >= n || j >= n {
            return Err(GraphError::Provider(format!("pair ({i},{j}) outside {n} nodes")));
        }
        let d = provider.distance(i, j)?;
        if d < 0.0 {
            return Err(GraphError::NegativeDistance { from: i, to: j, value: d });
        }
        if !d.is_finite() {
            return Err(GraphError::Provider(format!("non-finite distance for ({i},{j})")));
        }
        queried.push((i, j, d));
    }
    if kernel.self_loops {
        for i in 0..n {
            if !pairs.contains(&(i, i)) {
                queried.push((i, i, 0.0));
            }
        }
    }
    let sigma = match kernel.sigma {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Auto => {
            let ds: Vec<f64> = queried.iter().map(|q| q.2).collect();
            population_std(&ds)
        }
    };
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(GraphError::DegenerateKernel);
    }
    let triples = queried.into_iter().filter_map(|(i, j, d)| {
        let w = kernel_weight(d, sigma);
        let keep = match kernel.threshold_on {
            ThresholdOn::DistanceSq => d * d <= kernel.thresh,
            ThresholdOn::Weight => w >= kernel.thresh,
        };
        (keep && w > 0.0).then_some((i, j, w))
    });
    let adjacency =
        SparseMatrix::from_triples(n, n, triples).map_err(|e| GraphError::Provider(e.to_string()))?;
    SensorGraph::new(meta.iter().map(|m| m.sensor_id.clone()).collect(), adjacency, sigma, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MILE_DEG: f64 = 1.0 / 69.09;

    fn collinear(miles: &[f64]) -> Vec<SensorMeta> {
        miles
            .iter()
            .enumerate()
            .map(|(i, &m)| SensorMeta::new(&format!("s{i}"), 34.0 + m * MILE_DEG, -118.0))
            .collect()
    }

    #[test]
    fn knn_collinear_k1() {
        let meta = collinear(&[0.0, 1.0, 3.0]);
        let pairs = knn_candidates(&meta, 1).unwrap();
        let expected: BTreeSet<_> = [(0, 1), (1, 0), (2, 1)].into_iter().collect();
        assert_eq!(pairs, expected);
    }

    #[test]
    fn knn_large_k_gives_all_pairs() {
        let meta = collinear(&[0.0, 1.0, 3.0, 7.0]);
        let pairs = knn_candidates(&meta, 10).unwrap();
        assert_eq!(pairs.len(), 12);
    }

    #[test]
    fn knn_single_node_and_empty() {
        assert!(knn_candidates(&collinear(&[0.0]), 1).unwrap().is_empty());
        assert_eq!(knn_candidates(&[], 1), Err(GraphError::EmptyGraph));
    }

    #[test]
    fn knn_tie_breaks_on_index() {
        // node 1 is equidistant from 0 and 2
        let meta = collinear(&[0.0, 1.0, 2.0]);
        let pairs = knn_candidates(&meta, 1).unwrap();
        assert!(pairs.contains(&(1, 0)));
        assert!(!pairs.contains(&(1, 2)));
    }

    fn table(rows: &[Vec<f64>]) -> TableProvider {
        TableProvider::from_matrix(rows)
    }

    #[test]
    fn kernel_values() {
        let meta = collinear(&[0.0, 1.0, 2.0]);
        let pairs: BTreeSet<_> = [(0, 1), (1, 2), (2, 0)].into_iter().collect();
        let provider = table(&[vec![0.0, 0.0, 9.0], vec![9.0, 0.0, 2.0], vec![2.0, 9.0, 0.0]]);
        let kernel = KernelConfig {
            sigma: SigmaMode::Fixed(2.0),
            ..KernelConfig::default()
        };
        let g = build_adjacency(&meta, &pairs, &provider, kernel).unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
        assert!((g.weight(1, 2) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g.weight(1, 2) - 0.367879).abs() < 1e-6);
        // directed: reverse edge not stored
        assert_eq!(g.weight(2, 1), 0.0);
    }

    #[test]
    fn threshold_modes() {
        let meta = collinear(&[0.0, 1.0, 2.0]);
        let pairs: BTreeSet<_> = [(0, 1), (0, 2)].into_iter().collect();
        let provider = table(&[vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 1.0], vec![3.0, 1.0, 0.0]]);
        let by_dist = KernelConfig {
            threshold_on: ThresholdOn::DistanceSq,
            thresh: 4.0,
            sigma: SigmaMode::Fixed(2.0),
            self_loops: false,
        };
        let g = build_adjacency(&meta, &pairs, &provider, by_dist).unwrap();
        assert!(g.weight(0, 1) > 0.0);
        assert_eq!(g.weight(0, 2), 0.0);

        // exp(-9/4) ≈ 0.105 < 0.2, exp(-1/4) ≈ 0.78
        let by_weight = KernelConfig {
            threshold_on: ThresholdOn::Weight,
            thresh: 0.2,
            ..by_dist
        };
        let g = build_adjacency(&meta, &pairs, &provider, by_weight).unwrap();
        assert!(g.weight(0, 1) > 0.0);
        assert_eq!(g.weight(0, 2), 0.0);
    }

    #[test]
    fn auto_sigma_is_population_std() {
        let meta = collinear(&[0.0, 1.0, 2.0]);
        let pairs: BTreeSet<_> = [(0, 1), (0, 2)].into_iter().collect();
        let provider = table(&[vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 1.0], vec![3.0, 1.0, 0.0]]);
        let g = build_adjacency(&meta, &pairs, &provider, KernelConfig::default()).unwrap();
        assert_eq!(g.kernel_sigma(), 1.0);
        assert_eq!(g.weight(0, 1), kernel_weight(1.0, 1.0));
    }

    #[test]
    fn degenerate_and_negative() {
        let meta = collinear(&[0.0, 1.0, 2.0]);
        let pairs: BTreeSet<_> = [(0, 1), (1, 2)].into_iter().collect();
        let same = table(&[vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0], vec![0.0; 3]]);
        assert_eq!(
            build_adjacency(&meta, &pairs, &same, KernelConfig::default()),
            Err(GraphError::DegenerateKernel)
        );
        let neg = table(&[vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 2.0], vec![0.0; 3]]);
        assert!(matches!(
            build_adjacency(&meta, &pairs, &neg, KernelConfig::default()),
            Err(GraphError::NegativeDistance { .. })
        ));
    }

    #[test]
    fn induced_keeps_internal_edges() {
        let g = SensorGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 0.25), (3, 0, 0.1)]).unwrap();
        let sub = g.induced(&[2, 1]);
        assert_eq!(sub.sensor_ids(), &["2".to_string(), "1".to_string()]);
        assert_eq!(sub.weight(1, 0), 0.5);
        assert_eq!(sub.n_edges(), 1);
    }

    fn random_meta() -> impl Strategy<Value = Vec<SensorMeta>> {
        prop::collection::vec((33.0f64..35.0, -119.0f64..-117.0), 2..12).prop_map(|coords| {
            coords
                .into_iter()
                .enumerate()
                .map(|(i, (la, lo))| SensorMeta::new(&format!("id{i:03}"), la, lo))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval_and_reproducible(meta in random_meta(), k in 1usize..5) {
            let pairs = knn_candidates(&meta, k).unwrap();
            let provider = HaversineProvider::new(&meta);
            let Ok(g) = build_adjacency(&meta, &pairs, &provider, KernelConfig::default()) else {
                return Ok(());
            };
            for (i, j, w) in g.adjacency().triples() {
                prop_assert!(w > 0.0 && w <= 1.0);
                let d = provider.distance(i, j).unwrap();
                prop_assert_eq!(w, kernel_weight(d, g.kernel_sigma()));
            }
        }

        #[test]
        fn knn_invariant_under_row_permutation(meta in random_meta(), k in 1usize..4, rot in 0usize..12) {
            let mut shuffled = meta.clone();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            let a = knn_candidates(&canonical_order(&meta), k).unwrap();
            let b = knn_candidates(&canonical_order(&shuffled), k).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn restriction_commutes_with_kernel(meta in random_meta(), k in 1usize..4) {
            let n = meta.len();
            let all: BTreeSet<_> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
            let knn = knn_candidates(&meta, k).unwrap();
            let provider = HaversineProvider::new(&meta);
            let kernel = KernelConfig { sigma: SigmaMode::Fixed(3.0), thresh: 400.0, ..KernelConfig::default() };
            let full = build_adjacency(&meta, &all, &provider, kernel).unwrap();
            let restricted = build_adjacency(&meta, &knn, &provider, kernel).unwrap();
            for &(i, j) in &knn {
                prop_assert_eq!(full.weight(i, j), restricted.weight(i, j));
            }
            for (i, j, _) in restricted.adjacency().triples() {
                prop_assert!(knn.contains(&(i, j)));
            }
        }
    }
}
