use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PartitionAssignment, PartitionError, SubgraphBundle};
use crate::graph::{read_graph, write_graph, SensorGraph};

fn io_err(path: &Path, e: impl std::fmt::Display) -> PartitionError {
    PartitionError::Io(format!("{}: {e}", path.display()))
}

#[derive(Serialize, Deserialize)]
struct AssignmentRow {
    sensor_id: String,
    part: usize,
}

/// `sensor_id,part`, one row per node in graph order.
pub fn write_assignment_csv(path: &Path, graph: &SensorGraph, a: &PartitionAssignment) -> Result<(), PartitionError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for (id, &part) in graph.sensor_ids().iter().zip(a.part_of()) {
        w.serialize(AssignmentRow {
            sensor_id: id.clone(),
            part,
        })
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_assignment_csv(path: &Path, graph: &SensorGraph) -> Result<PartitionAssignment, PartitionError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut part_of = vec![usize::MAX; graph.n_nodes()];
    for row in r.deserialize::<AssignmentRow>() {
        let row = row.map_err(|e| io_err(path, e))?;
        let v = graph
            .node_of(&row.sensor_id)
            .ok_or_else(|| PartitionError::Inconsistent(format!("unknown sensor {:?}", row.sensor_id)))?;
        part_of[v] = row.part;
    }
    if part_of.contains(&usize::MAX) {
        return Err(PartitionError::Inconsistent("assignment does not cover every node".into()));
    }
    let k = part_of.iter().max().map_or(0, |m| m + 1);
    Ok(PartitionAssignment::new(part_of, k))
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    local: usize,
    global: usize,
    sensor_id: String,
    halo: bool,
}

pub fn bundle_dir(root: &Path, part: usize) -> PathBuf {
    root.join(format!("part_{part:03}"))
}

/// One directory per part holding `graph.json`, `index_map.csv`
/// (`local,global,sensor_id,halo`) and `halos.csv`.
pub fn write_bundles(root: &Path, bundles: &[SubgraphBundle]) -> Result<(), PartitionError> {
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    for b in bundles {
        let dir = bundle_dir(root, b.part);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_graph(&dir.join("graph.json"), &b.graph)?;
        let path = dir.join("index_map.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        for (l, (&g, &h)) in b.global_nodes.iter().zip(&b.halo).enumerate() {
            w.serialize(IndexRow {
                local: l,
                global: g,
                sensor_id: b.graph.sensor_ids()[l].clone(),
                halo: h,
            })
            .map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        let path = dir.join("halos.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(["sensor_id"]).map_err(|e| io_err(&path, e))?;
        for (l, &h) in b.halo.iter().enumerate() {
            if h {
                w.write_record([b.graph.sensor_ids()[l].as_str()]).map_err(|e| io_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Reads every `part_*` directory under `root`, ordered by part id.
pub fn read_bundles(root: &Path) -> Result<Vec<SubgraphBundle>, PartitionError> {
    let mut dirs: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let entry = entry.map_err(|e| io_err(root, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_prefix("part_").and_then(|s| s.parse::<usize>().ok()) {
            dirs.push((id, entry.path()));
        }
    }
    dirs.sort();
    let mut bundles = Vec::with_capacity(dirs.len());
    for (part, dir) in dirs {
        let graph = read_graph(&dir.join("graph.json"))?;
        let path = dir.join("index_map.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| io_err(&path, e))?;
        let mut global_nodes = Vec::new();
        let mut halo = Vec::new();
        for (expected, row) in r.deserialize::<IndexRow>().enumerate() {
            let row = row.map_err(|e| io_err(&path, e))?;
            if row.local != expected || graph.sensor_ids().get(row.local) != Some(&row.sensor_id) {
                return Err(PartitionError::Inconsistent(format!("{} row {}", path.display(), expected + 2)));
            }
            global_nodes.push(row.global);
            halo.push(row.halo);
        }
        if global_nodes.len() != graph.n_nodes() {
            return Err(PartitionError::Inconsistent(format!("{}: index map size", path.display())));
        }
        bundles.push(SubgraphBundle {
            part,
            global_nodes,
            halo,
            graph,
        });
    }
    Ok(bundles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::extract_subgraphs;

    #[test]
    fn bundles_and_assignment_round_trip() {
        let g = SensorGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.0)]).unwrap();
        let a = PartitionAssignment::new(vec![0, 0, 1, 1], 2);
        let bundles = extract_subgraphs(&g, &a, &[vec![2], vec![1]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundles(dir.path(), &bundles).unwrap();
        assert_eq!(read_bundles(dir.path()).unwrap(), bundles);
        let p = dir.path().join("assignment.csv");
        write_assignment_csv(&p, &g, &a).unwrap();
        assert_eq!(read_assignment_csv(&p, &g).unwrap(), a);
        let halos = fs::read_to_string(bundle_dir(dir.path(), 0).join("halos.csv")).unwrap();
        assert_eq!(halos, "sensor_id\n2\n");
    }
}
