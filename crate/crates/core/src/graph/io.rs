use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_meta, GraphError, KernelConfig, SensorGraph, SensorMeta};
use crate::numcore::SparseMatrix;

const META_HEADER: [&str; 6] = ["sensor_id", "latitude", "longitude", "district", "sensor_type", "lane_type"];
const GRAPH_FORMAT: &str = "traffic-dcrnn/sensor-graph";

/// Reads `sensor_id,latitude,longitude,district,sensor_type,lane_type`.
///
/// Schema problems report the 1-based file line.
pub fn read_metadata_csv(path: &Path) -> Result<Vec<SensorMeta>, GraphError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| GraphError::Schema {
        row: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != META_HEADER {
        return Err(GraphError::Schema {
            row: 1,
            message: format!("expected header {}", META_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<SensorMeta>().enumerate() {
        let row = i + 2;
        let meta = rec.map_err(|e| GraphError::Schema {
            row,
            message: e.to_string(),
        })?;
        if meta.sensor_id.is_empty() {
            return Err(GraphError::Schema {
                row,
                message: "empty sensor_id".into(),
            });
        }
        out.push(meta);
    }
    if out.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    validate_meta(&out)?;
    Ok(out)
}

pub fn write_metadata_csv(path: &Path, meta: &[SensorMeta]) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| GraphError::Io(e.to_string()))?;
    for m in meta {
        w.serialize(m).map_err(|e| GraphError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| GraphError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct GraphFile {
    format: String,
    version: u32,
    n_nodes: usize,
    sensor_ids: Vec<String>,
    kernel_sigma: f64,
    kernel: KernelConfig,
    /// `(row, col, weight)` triples, row-major order.
    edges: Vec<(usize, usize, f64)>,
}

impl GraphFile {
    pub(crate) fn from_graph(graph: &SensorGraph) -> Self {
        GraphFile {
            format: GRAPH_FORMAT.into(),
            version: 1,
            n_nodes: graph.n_nodes(),
            sensor_ids: graph.sensor_ids().to_vec(),
            kernel_sigma: graph.kernel_sigma(),
            kernel: graph.kernel(),
            edges: graph.adjacency().triples().collect(),
        }
    }

    pub(crate) fn into_graph(self) -> Result<SensorGraph, GraphError> {
        graph_from_file(self)
    }
}

pub(crate) fn graph_to_json(graph: &SensorGraph) -> String {
    serde_json::to_string_pretty(&GraphFile::from_graph(graph)).expect("graph serializes")
}

pub(crate) fn graph_from_json(text: &str) -> Result<SensorGraph, GraphError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Io(format!("bad graph file: {e}")))?;
    graph_from_file(file)
}

fn graph_from_file(file: GraphFile) -> Result<SensorGraph, GraphError> {
    if file.format != GRAPH_FORMAT {
        return Err(GraphError::Io(format!("unexpected format tag {:?}", file.format)));
    }
    if file.sensor_ids.len() != file.n_nodes {
        return Err(GraphError::Io("sensor id table does not match n_nodes".into()));
    }
    let adjacency = SparseMatrix::from_triples(file.n_nodes, file.n_nodes, file.edges)
        .map_err(|e| GraphError::Io(e.to_string()))?;
    SensorGraph::new(file.sensor_ids, adjacency, file.kernel_sigma, file.kernel)
}

/// Self-describing JSON: N, id table, σ, threshold config and the sparse
/// triples with full-precision weights.
pub fn write_graph(path: &Path, graph: &SensorGraph) -> Result<(), GraphError> {
    fs::write(path, graph_to_json(graph)).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))
}

pub fn read_graph(path: &Path) -> Result<SensorGraph, GraphError> {
    let text = fs::read_to_string(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
    graph_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{SigmaMode, ThresholdOn};

    #[test]
    fn graph_round_trip_is_exact() {
        let adjacency = SparseMatrix::from_triples(3, 3, [(0, 1, 0.1 + 0.2), (2, 0, (-1.0f64).exp())]).unwrap();
        let kernel = KernelConfig {
            threshold_on: ThresholdOn::Weight,
            thresh: 0.1,
            sigma: SigmaMode::Auto,
            self_loops: false,
        };
        let g = SensorGraph::new(vec!["a".into(), "b".into(), "c".into()], adjacency, 1.2345678901234567, kernel)
            .unwrap();
        let back = graph_from_json(&graph_to_json(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn metadata_schema_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("meta.csv");
        fs::write(
            &p,
            "sensor_id,latitude,longitude,district,sensor_type,lane_type\na,34.0,-118.0,7,ML,mainline\nb,north,-118.0,7,ML,mainline\n",
        )
        .unwrap();
        match read_metadata_csv(&p) {
            Err(GraphError::Schema { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected schema error, got {other:?}"),
        }
        fs::write(&p, "sensor_id,latitude,longitude,district,sensor_type,lane_type\n").unwrap();
        assert_eq!(read_metadata_csv(&p), Err(GraphError::EmptyGraph));
        fs::write(&p, "id,lat,lon\n").unwrap();
        assert!(matches!(read_metadata_csv(&p), Err(GraphError::Schema { row: 1, .. })));
    }

    #[test]
    fn metadata_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("meta.csv");
        let mut m = SensorMeta::new("x1", 34.5, -118.25);
        m.district = "7".into();
        m.sensor_type = "loop".into();
        m.lane_type = "HOV".into();
        write_metadata_csv(&p, &[m.clone()]).unwrap();
        assert_eq!(read_metadata_csv(&p).unwrap(), vec![m]);
    }
}
