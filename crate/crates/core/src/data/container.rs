use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DataError, TimeSeriesPanel, WindowedDataset};
use crate::data::parse_timestamp;
use crate::numcore::DenseTensor;

const MAGIC: &[u8; 8] = b"TDCRNNv1";

/// JSON metadata plus named little-endian `f64` arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub arrays: BTreeMap<String, DenseTensor>,
}

#[derive(Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayHeader>,
}

fn cerr(e: impl std::fmt::Display) -> DataError {
    DataError::Container(e.to_string())
}

/// Layout: magic, `u64` header length, JSON header, then each array's values
/// in header order.
pub fn write_container(path: &Path, meta: &Value, arrays: &[(&str, &DenseTensor)]) -> Result<(), DataError> {
    let header = Header {
        meta: meta.clone(),
        arrays: arrays
            .iter()
            .map(|(n, t)| ArrayHeader {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(cerr)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?);
    w.write_all(MAGIC).map_err(cerr)?;
    w.write_u64::<LittleEndian>(json.len() as u64).map_err(cerr)?;
    w.write_all(&json).map_err(cerr)?;
    for (_, t) in arrays {
        for &v in t.values() {
            w.write_f64::<LittleEndian>(v).map_err(cerr)?;
        }
    }
    w.flush().map_err(cerr)
}

pub fn read_container(path: &Path) -> Result<Container, DataError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(cerr)?;
    if &magic != MAGIC {
        return Err(DataError::Container("bad magic".into()));
    }
    let len = r.read_u64::<LittleEndian>().map_err(cerr)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(cerr)?;
    let header: Header = serde_json::from_slice(&json).map_err(cerr)?;
    let mut arrays = BTreeMap::new();
    for a in header.arrays {
        let count: usize = a.shape.iter().product();
        let mut vals = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut vals).map_err(cerr)?;
        arrays.insert(a.name, DenseTensor::new(a.shape, vals).map_err(cerr)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(cerr)?;
    if !rest.is_empty() {
        return Err(DataError::Container(format!("{} trailing bytes", rest.len())));
    }
    Ok(Container {
        meta: header.meta,
        arrays,
    })
}

#[derive(Serialize, Deserialize)]
struct PanelMeta {
    kind: String,
    start: String,
    sensor_ids: Vec<String>,
    feature_names: Vec<String>,
}

fn panel_parts(panel: &TimeSeriesPanel) -> (PanelMeta, DenseTensor, DenseTensor) {
    let shape = vec![panel.n_times(), panel.n_nodes(), panel.n_features()];
    let mask = panel.missing_mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    (
        PanelMeta {
            kind: "panel".into(),
            start: panel.start().format("%Y-%m-%dT%H:%M:%S").to_string(),
            sensor_ids: panel.sensor_ids().to_vec(),
            feature_names: panel.feature_names().to_vec(),
        },
        DenseTensor::new(shape.clone(), panel.values().to_vec()).expect("panel shape"),
        DenseTensor::new(shape, mask).expect("panel shape"),
    )
}

fn panel_from(meta: &Value, c: &Container) -> Result<TimeSeriesPanel, DataError> {
    let m: PanelMeta = serde_json::from_value(meta.clone()).map_err(cerr)?;
    let start = parse_timestamp(&m.start).ok_or_else(|| DataError::Container(format!("bad start {}", m.start)))?;
    let get = |n: &str| c.arrays.get(n).ok_or_else(|| DataError::Container(format!("missing array {n}")));
    let values = get("values")?.values().to_vec();
    let missing = get("missing")?.values().iter().map(|&v| v != 0.0).collect();
    TimeSeriesPanel::new(start, m.sensor_ids, m.feature_names, values, missing)
}

pub fn write_panel_binary(path: &Path, panel: &TimeSeriesPanel) -> Result<(), DataError> {
    let (meta, values, mask) = panel_parts(panel);
    let meta = serde_json::to_value(meta).map_err(cerr)?;
    write_container(path, &meta, &[("values", &values), ("missing", &mask)])
}

pub fn read_panel_binary(path: &Path) -> Result<TimeSeriesPanel, DataError> {
    let c = read_container(path)?;
    if c.meta.get("kind").and_then(Value::as_str) != Some("panel") {
        return Err(DataError::Container("not a panel container".into()));
    }
    panel_from(&c.meta, &c)
}

pub fn write_windows_binary(path: &Path, ds: &WindowedDataset) -> Result<(), DataError> {
    let (pmeta, values, mask) = panel_parts(&ds.panel);
    let meta = serde_json::json!({
        "kind": "windows",
        "panel": pmeta,
        "look_back": ds.look_back,
        "horizon": ds.horizon,
        "input_features": ds.input_features,
        "output_features": ds.output_features,
    });
    let starts = DenseTensor::new(vec![ds.starts.len()], ds.starts.iter().map(|&s| s as f64).collect())
        .expect("vector shape");
    write_container(path, &meta, &[("values", &values), ("missing", &mask), ("starts", &starts)])
}

pub fn read_windows_binary(path: &Path) -> Result<WindowedDataset, DataError> {
    let c = read_container(path)?;
    if c.meta.get("kind").and_then(Value::as_str) != Some("windows") {
        return Err(DataError::Container("not a windows container".into()));
    }
    let panel = panel_from(&c.meta["panel"], &c)?;
    let field = |k: &str| serde_json::from_value::<Value>(c.meta[k].clone()).map_err(cerr);
    let usize_of = |k: &str| -> Result<usize, DataError> {
        field(k)?.as_u64().map(|v| v as usize).ok_or_else(|| DataError::Container(format!("bad {k}")))
    };
    let list = |k: &str| -> Result<Vec<usize>, DataError> { serde_json::from_value(field(k)?).map_err(cerr) };
    let starts = c
        .arrays
        .get("starts")
        .ok_or_else(|| DataError::Container("missing array starts".into()))?
        .values()
        .iter()
        .map(|&s| s as usize)
        .collect();
    Ok(WindowedDataset {
        panel,
        look_back: usize_of("look_back")?,
        horizon: usize_of("horizon")?,
        starts,
        input_features: list("input_features")?,
        output_features: list("output_features")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_windows, SyntheticScenario};

    #[test]
    fn panel_and_windows_round_trip() {
        let d = generate_synthetic(&SyntheticScenario {
            n_nodes: 4,
            days: 1,
            missing_rate: 0.05,
            ..SyntheticScenario::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("panel.bin");
        write_panel_binary(&p, &d.panel).unwrap();
        let back = read_panel_binary(&p).unwrap();
        assert_eq!(back.missing_mask(), d.panel.missing_mask());
        assert_eq!(back.sensor_ids(), d.panel.sensor_ids());
        assert!(back
            .values()
            .iter()
            .zip(d.panel.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let w = make_windows(&back, 12, 12, 5).unwrap().with_features(vec![0, 1], vec![0]).unwrap();
        let q = dir.path().join("windows.bin");
        write_windows_binary(&q, &w).unwrap();
        let wb = read_windows_binary(&q).unwrap();
        assert_eq!(wb.starts, w.starts);
        assert_eq!(wb.output_features, vec![0]);
        assert_eq!(wb.look_back, 12);
        assert!(read_panel_binary(&q).is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"NOTMAGIC").unwrap();
        assert!(matches!(read_container(&p), Err(DataError::Container(_))));
    }
}
