//! Error analysis: MAE classes, coefficient of variation, CART sensitivity
//! analysis, box-plot statistics and fundamental-diagram emission.

mod cart;
mod stats;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesPanel;
use crate::graph::SensorMeta;
use crate::numcore::DenseTensor;

pub use cart::{train_cart, CartConfig, CartNode, CartResult, CartTree, Dataset, FeatureColumn, SplitTest};
pub use stats::{mae_distribution_stats, write_box_stats_csv, BoxStats};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("node {node}: zero mean, coefficient of variation undefined")]
    ZeroMean { node: String },
    #[error("flow not forecast")]
    FlowNotForecast,
    #[error("no records")]
    Empty,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("io error: {0}")]
    Io(String),
}

/// MAE class: `<1`, `[1,3)`, `[3,5)`, `≥5`.
pub fn bin_mae(mae: f64) -> u8 {
    match mae {
        m if m < 1.0 => 0,
        m if m < 3.0 => 1,
        m if m < 5.0 => 2,
        _ => 3,
    }
}

/// Per-node σ/μ of one feature over the observed entries of the panel,
/// with population σ. Zero-mean nodes get an error entry.
pub fn coefficient_of_variation(panel: &TimeSeriesPanel, feature: usize) -> Vec<Result<f64, AnalysisError>> {
    (0..panel.n_nodes())
        .map(|n| {
            let vals: Vec<f64> = (0..panel.n_times())
                .filter(|&t| !panel.is_missing(t, n, feature))
                .map(|t| panel.get(t, n, feature))
                .collect();
            let len = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / len;
            if vals.is_empty() || mean == 0.0 {
                return Err(AnalysisError::ZeroMean {
                    node: panel.sensor_ids()[n].clone(),
                });
            }
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
            Ok(var.sqrt() / mean)
        })
        .collect()
}

/// One node's test error with the factors used by the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub node_id: String,
    pub mae: f64,
    pub mae_class: u8,
    pub cov: f64,
    pub district: String,
    pub sensor_type: String,
    pub lane_type: String,
}

impl ErrorRecord {
    pub fn new(meta: &SensorMeta, mae: f64, cov: f64) -> Self {
        Self {
            node_id: meta.sensor_id.clone(),
            mae,
            mae_class: bin_mae(mae),
            cov,
            district: meta.district.clone(),
            sensor_type: meta.sensor_type.clone(),
            lane_type: meta.lane_type.clone(),
        }
    }
}

/// Feature names in [`records_dataset`] column order.
pub const FACTORS: [&str; 4] = ["cov", "district", "sensor_type", "lane_type"];

/// Tree inputs: `cov` numeric, the rest categorical; labels are MAE classes.
pub fn records_dataset(records: &[ErrorRecord]) -> Dataset {
    let cat = |f: fn(&ErrorRecord) -> &String| FeatureColumn::Categorical(records.iter().map(|r| f(r).clone()).collect());
    Dataset {
        names: FACTORS.iter().map(|s| s.to_string()).collect(),
        columns: vec![
            FeatureColumn::Numeric(records.iter().map(|r| r.cov).collect()),
            cat(|r| &r.district),
            cat(|r| &r.sensor_type),
            cat(|r| &r.lane_type),
        ],
        labels: records.iter().map(|r| r.mae_class as usize).collect(),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Io(format!("{}: {e}", path.display()))
}

/// `node_id,mae,mae_class,cov,district,sensor_type,lane_type`.
pub fn write_error_records_csv(path: &Path, records: &[ErrorRecord]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_error_records_csv(path: &Path) -> Result<Vec<ErrorRecord>, AnalysisError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

/// One forecast (speed, flow) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramRow {
    pub sensor_id: String,
    pub sample: usize,
    pub step: usize,
    pub speed: f64,
    pub flow: f64,
}

/// Paired speed/flow values from forecasts `[T × N × Q]`, one row per
/// (node, sample, step), untransformed.
pub fn emit_fundamental_diagram(
    sensor_ids: &[String],
    features: &[String],
    forecasts: &[DenseTensor],
) -> Result<Vec<DiagramRow>, AnalysisError> {
    let pos = |name: &str| features.iter().position(|f| f == name);
    let flow = pos("flow").ok_or(AnalysisError::FlowNotForecast)?;
    let speed = pos("speed").ok_or_else(|| AnalysisError::UnknownFeature("speed".into()))?;
    let (n, q) = (sensor_ids.len(), features.len());
    let mut rows = Vec::new();
    for (node, id) in sensor_ids.iter().enumerate() {
        for (sample, f) in forecasts.iter().enumerate() {
            let shape = f.shape();
            if shape.len() != 3 || shape[1] != n || shape[2] != q {
                return Err(AnalysisError::Shape(format!("forecast {shape:?} for {n} nodes, {q} features")));
            }
            for step in 0..shape[0] {
                let at = |c: usize| f.values()[(step * n + node) * q + c];
                rows.push(DiagramRow {
                    sensor_id: id.clone(),
                    sample,
                    step,
                    speed: at(speed),
                    flow: at(flow),
                });
            }
        }
    }
    Ok(rows)
}

/// `sensor_id,sample,step,speed,flow`.
pub fn write_fundamental_diagram_csv(path: &Path, rows: &[DiagramRow]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
