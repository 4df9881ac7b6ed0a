use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trainer::{run_batch, SupportCache};
use super::{Checkpoint, LossKind, TrainError};
use crate::data::{FeatureScaler, WindowedDataset, TICK_MINUTES};
use crate::model::{build_supports, DcgruParams};
use crate::numcore::DenseTensor;

/// Horizons reported by [`evaluate`], in minutes.
pub const REPORT_HORIZONS: [usize; 3] = [15, 30, 60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMae {
    pub sensor_id: String,
    pub global: usize,
    /// One entry per output feature, original units.
    pub mae: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMae {
    pub minutes: usize,
    /// MAE over the first `minutes / 5` steps, per output feature.
    pub mae: Vec<f64>,
}

/// Test error over owned nodes only; halos are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub part: usize,
    pub features: Vec<String>,
    pub samples: usize,
    pub per_node: Vec<NodeMae>,
    pub horizons: Vec<HorizonMae>,
    /// Mean over owned nodes and all horizon steps, per output feature.
    pub mean_mae: Vec<f64>,
}

/// Inference with a loaded checkpoint; supports are built once.
pub struct Forecaster {
    part: usize,
    params: DcgruParams,
    sups: SupportCache,
    scaler: FeatureScaler,
    input_columns: Vec<usize>,
    output_columns: Vec<usize>,
    sensor_ids: Vec<String>,
    global_nodes: Vec<usize>,
    halo: Vec<bool>,
    batch_size: usize,
}

impl Forecaster {
    pub fn new(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let m = ckpt.config.model;
        let graph = ckpt.graph()?;
        Ok(Self {
            part: ckpt.part,
            params: ckpt.model_params()?,
            sups: SupportCache::new(build_supports(&graph, m.filter_type, m.max_diffusion_step)),
            scaler: ckpt.scaler.clone(),
            input_columns: ckpt.input_columns()?,
            output_columns: ckpt.output_columns()?,
            sensor_ids: ckpt.sensor_ids.clone(),
            global_nodes: ckpt.global_nodes.clone(),
            halo: ckpt.halo.clone(),
            batch_size: ckpt.config.batch_size,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    /// Forecast from `T'` input frames `[B·N × P]` in original units;
    /// returns `T` frames `[B·N × Q]` in original units.
    pub fn forecast_frames(&mut self, inputs: &[DenseTensor]) -> Result<Vec<DenseTensor>, TrainError> {
        let m = self.params.config;
        let n = self.n_nodes();
        if inputs.len() != m.look_back {
            return Err(TrainError::Shape(format!("{} input steps, expected {}", inputs.len(), m.look_back)));
        }
        let rows = inputs[0].rows();
        if rows == 0 || rows % n != 0 || inputs.iter().any(|x| x.shape() != [rows, m.input_dim]) {
            return Err(TrainError::Shape(format!(
                "input frames must be [B·{n} × {}], got {:?}",
                m.input_dim,
                inputs[0].shape()
            )));
        }
        let batch = rows / n;
        let scaled = inputs
            .iter()
            .map(|x| {
                let mut x = x.clone();
                for (i, v) in x.values_mut().iter_mut().enumerate() {
                    *v = self.scaler.scale(self.input_columns[i % m.input_dim], *v);
                }
                x
            })
            .collect();
        let dummy = vec![DenseTensor::zeros(vec![rows, m.output_dim]); m.horizon];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let preds = run_batch_preds(&self.params, &mut self.sups, scaled, dummy, batch, &mut rng)?;
        Ok(preds
            .into_iter()
            .map(|mut p| {
                self.scaler.inverse_transform(p.values_mut(), &self.output_columns);
                p
            })
            .collect())
    }

    /// One window `[T' × N × P]` in original units to `[T × N × Q]`.
    pub fn forecast(&mut self, window: &DenseTensor) -> Result<DenseTensor, TrainError> {
        let m = self.params.config;
        let n = self.n_nodes();
        let expected = [m.look_back, n, m.input_dim];
        if window.shape() != expected {
            return Err(TrainError::Shape(format!("window {:?}, expected {expected:?}", window.shape())));
        }
        let step = n * m.input_dim;
        let frames = window
            .values()
            .chunks(step)
            .map(|c| DenseTensor::matrix(n, m.input_dim, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.forecast_frames(&frames)?;
        let values = out.into_iter().flat_map(DenseTensor::into_values).collect();
        Ok(DenseTensor::new(vec![m.horizon, n, m.output_dim], values)?)
    }

    /// MAE on windows in original units, over owned nodes.
    pub fn evaluate(&mut self, test: &WindowedDataset) -> Result<EvalReport, TrainError> {
        let m = self.params.config;
        let n = self.n_nodes();
        let q = m.output_dim;
        if test.n_nodes() != n || test.look_back != m.look_back || test.horizon != m.horizon {
            return Err(TrainError::Shape(format!(
                "windows over {} nodes with T'={} T={}, model expects {n} nodes with T'={} T={}",
                test.n_nodes(),
                test.look_back,
                test.horizon,
                m.look_back,
                m.horizon
            )));
        }
        // abs error sums per (step, node, feature)
        let mut sums = vec![0.0; m.horizon * n * q];
        let idx: Vec<usize> = (0..test.len()).collect();
        for chunk in idx.chunks(self.batch_size.max(1)) {
            let (x, y) = test.batch(chunk);
            let pred = self.forecast_frames(&x)?;
            for (step, (p, t)) in pred.iter().zip(&y).enumerate() {
                for (i, (a, b)) in p.values().iter().zip(t.values()).enumerate() {
                    let node = (i / q) % n;
                    sums[(step * n + node) * q + i % q] += (a - b).abs();
                }
            }
        }
        let samples = test.len();
        let owned: Vec<usize> = (0..n).filter(|&i| !self.halo[i]).collect();
        let mean_over = |steps: usize, nodes: &[usize], f: usize| {
            let s: f64 = (0..steps)
                .flat_map(|t| nodes.iter().map(move |&nd| (t, nd)))
                .map(|(t, nd)| sums[(t * n + nd) * q + f])
                .sum();
            s / (steps * nodes.len() * samples) as f64
        };
        let per_node = owned
            .iter()
            .map(|&nd| NodeMae {
                sensor_id: self.sensor_ids[nd].clone(),
                global: self.global_nodes[nd],
                mae: (0..q).map(|f| mean_over(m.horizon, &[nd], f)).collect(),
            })
            .collect();
        let horizons = REPORT_HORIZONS
            .iter()
            .filter(|&&mins| mins / TICK_MINUTES as usize <= m.horizon)
            .map(|&mins| HorizonMae {
                minutes: mins,
                mae: (0..q).map(|f| mean_over(mins / TICK_MINUTES as usize, &owned, f)).collect(),
            })
            .collect();
        Ok(EvalReport {
            part: self.part,
            features: self.output_columns.iter().map(|&c| self.scaler.feature_names[c].clone()).collect(),
            samples,
            per_node,
            horizons,
            mean_mae: (0..q).map(|f| mean_over(m.horizon, &owned, f)).collect(),
        })
    }
}

fn run_batch_preds(
    params: &DcgruParams,
    sups: &mut SupportCache,
    inputs: Vec<DenseTensor>,
    targets: Vec<DenseTensor>,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DenseTensor>, TrainError> {
    let out = run_batch(params, sups, inputs, targets, batch, 0.0, LossKind::Mae, rng, false, true)?;
    Ok(out.preds.expect("predictions requested"))
}

/// Forecast one window `[T' × N × P]` (original units) with a checkpoint.
pub fn forecast(ckpt: &Checkpoint, window: &DenseTensor) -> Result<DenseTensor, TrainError> {
    Forecaster::new(ckpt)?.forecast(window)
}

/// Held-out MAE in original units; `test` must be unscaled windows over the
/// checkpoint's local nodes.
pub fn evaluate(ckpt: &Checkpoint, test: &WindowedDataset) -> Result<EvalReport, TrainError> {
    Forecaster::new(ckpt)?.evaluate(test)
}
