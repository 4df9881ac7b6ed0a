use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesPanel};
use crate::numcore::DenseTensor;
use crate::partition::SubgraphBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

/// Chronological `(train, valid, test)` tick ranges. Train and valid lengths
/// are floored, test takes the rest; every slice must hold `min_len` ticks.
pub fn split_ranges(
    n_times: usize,
    fractions: SplitFractions,
    min_len: usize,
) -> Result<[Range<usize>; 3], DataError> {
    let SplitFractions { train, valid, test } = fractions;
    if [train, valid, test].iter().any(|f| !f.is_finite() || *f < 0.0) || ((train + valid + test) - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidFractions(format!("{train}/{valid}/{test} must be non-negative and sum to 1")));
    }
    // the tiny epsilon keeps 0.7·100 from flooring to 69
    let n_train = (train * n_times as f64 + 1e-9).floor() as usize;
    let n_valid = (valid * n_times as f64 + 1e-9).floor() as usize;
    let n_train = n_train.min(n_times);
    let n_valid = n_valid.min(n_times - n_train);
    let ranges = [0..n_train, n_train..n_train + n_valid, n_train + n_valid..n_times];
    for r in &ranges {
        if r.len() < min_len {
            return Err(DataError::TooShort {
                needed: min_len,
                got: r.len(),
            });
        }
    }
    Ok(ranges)
}

pub fn split(
    panel: &TimeSeriesPanel,
    fractions: SplitFractions,
    min_len: usize,
) -> Result<[TimeSeriesPanel; 3], DataError> {
    let [a, b, c] = split_ranges(panel.n_times(), fractions, min_len)?;
    Ok([panel.slice_time(a), panel.slice_time(b), panel.slice_time(c)])
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits on observed entries only.
pub fn fit_scaler(train: &TimeSeriesPanel) -> Result<FeatureScaler, DataError> {
    let nf = train.n_features();
    let mut mean = vec![0.0; nf];
    let mut std = vec![0.0; nf];
    for f in 0..nf {
        let vals: Vec<f64> = (0..train.n_times())
            .flat_map(|t| (0..train.n_nodes()).map(move |n| (t, n)))
            .filter(|&(t, n)| !train.is_missing(t, n, f))
            .map(|(t, n)| train.get(t, n, f))
            .collect();
        let name = &train.feature_names()[f];
        if vals.is_empty() {
            return Err(DataError::FeatureEntirelyMissing(name.clone()));
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
        let s = var.sqrt();
        if !(s > 1e-12 * m.abs().max(1.0)) {
            return Err(DataError::DegenerateScale(name.clone()));
        }
        mean[f] = m;
        std[f] = s;
    }
    Ok(FeatureScaler {
        feature_names: train.feature_names().to_vec(),
        mean,
        std,
    })
}

impl FeatureScaler {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn scale(&self, f: usize, x: f64) -> f64 {
        (x - self.mean[f]) / self.std[f]
    }

    pub fn unscale(&self, f: usize, z: f64) -> f64 {
        z * self.std[f] + self.mean[f]
    }

    /// `z = (x − μ)/σ` on every entry; masked entries stay masked.
    pub fn transform(&self, panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel, DataError> {
        if panel.feature_names() != self.feature_names.as_slice() {
            return Err(DataError::Invalid(format!(
                "scaler features {:?} vs panel {:?}",
                self.feature_names,
                panel.feature_names()
            )));
        }
        let nf = self.n_features();
        let mut out = panel.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v = self.scale(i % nf, *v);
        }
        Ok(out)
    }

    /// Inverse on row-major values whose columns are the scaler features
    /// listed in `features`.
    pub fn inverse_transform(&self, values: &mut [f64], features: &[usize]) {
        for (i, v) in values.iter_mut().enumerate() {
            *v = self.unscale(features[i % features.len()], *v);
        }
    }
}

/// Sliding windows over a panel: sample `i` reads inputs from ticks
/// `[s, s+T')` and targets from `[s+T', s+T'+T)` where `s = starts[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub panel: TimeSeriesPanel,
    pub look_back: usize,
    pub horizon: usize,
    pub starts: Vec<usize>,
    pub input_features: Vec<usize>,
    pub output_features: Vec<usize>,
}

/// All features as both inputs and outputs; see
/// [`WindowedDataset::with_features`].
pub fn make_windows(
    panel: &TimeSeriesPanel,
    look_back: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowedDataset, DataError> {
    let span = look_back + horizon;
    if panel.n_times() < span {
        return Err(DataError::TooShort {
            needed: span,
            got: panel.n_times(),
        });
    }
    if stride == 0 || look_back == 0 || horizon == 0 {
        return Err(DataError::Invalid("look_back, horizon and stride must be positive".into()));
    }
    let all: Vec<usize> = (0..panel.n_features()).collect();
    Ok(WindowedDataset {
        panel: panel.clone(),
        look_back,
        horizon,
        starts: (0..=panel.n_times() - span).step_by(stride).collect(),
        input_features: all.clone(),
        output_features: all,
    })
}

impl WindowedDataset {
    pub fn with_features(mut self, input: Vec<usize>, output: Vec<usize>) -> Result<Self, DataError> {
        let nf = self.panel.n_features();
        if input.is_empty() || output.is_empty() || input.iter().chain(&output).any(|&f| f >= nf) {
            return Err(DataError::Invalid(format!("feature selection {input:?}/{output:?} for {nf} features")));
        }
        self.input_features = input;
        self.output_features = output;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.panel.n_nodes()
    }

    /// `(X [T'×N×P], Y [T×N×Q])` for sample `i`.
    pub fn sample(&self, i: usize) -> (DenseTensor, DenseTensor) {
        let s = self.starts[i];
        let n = self.n_nodes();
        let block = |from: usize, len: usize, feats: &[usize]| {
            let mut v = Vec::with_capacity(len * n * feats.len());
            for t in from..from + len {
                self.panel.frame(t, feats, &mut v);
            }
            DenseTensor::new(vec![len, n, feats.len()], v).expect("sized by construction")
        };
        (
            block(s, self.look_back, &self.input_features),
            block(s + self.look_back, self.horizon, &self.output_features),
        )
    }

    /// Per-step frames for a batch of samples: `T'` inputs and `T` targets,
    /// each `[B·N × C]` with rows ordered `(sample, node)`.
    pub fn batch(&self, samples: &[usize]) -> (Vec<DenseTensor>, Vec<DenseTensor>) {
        let n = self.n_nodes();
        let frames = |offset: usize, len: usize, feats: &[usize]| {
            (0..len)
                .map(|step| {
                    let mut v = Vec::with_capacity(samples.len() * n * feats.len());
                    for &i in samples {
                        self.panel.frame(self.starts[i] + offset + step, feats, &mut v);
                    }
                    DenseTensor::matrix(samples.len() * n, feats.len(), v).expect("sized by construction")
                })
                .collect::<Vec<_>>()
        };
        (
            frames(0, self.look_back, &self.input_features),
            frames(self.look_back, self.horizon, &self.output_features),
        )
    }
}

/// Columns of the bundle's local nodes, owned first then halos, matched by
/// sensor id.
pub fn slice_for_partition(panel: &TimeSeriesPanel, bundle: &SubgraphBundle) -> Result<TimeSeriesPanel, DataError> {
    panel.reorder_nodes(bundle.graph.sensor_ids())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::t0;
    use crate::graph::SensorGraph;
    use crate::partition::{extract_subgraphs, PartitionAssignment};
    use proptest::prelude::*;

    fn ramp(nt: usize, nn: usize) -> TimeSeriesPanel {
        let ids = (0..nn).map(|i| format!("s{i}")).collect();
        let values = (0..nt * nn * 2).map(|i| i as f64).collect();
        TimeSeriesPanel::from_values(t0(), ids, vec!["speed".into(), "flow".into()], values).unwrap()
    }

    #[test]
    fn split_examples() {
        let f = SplitFractions::default();
        let lens = |n| split_ranges(n, f, 1).unwrap().map(|r| r.len());
        assert_eq!(lens(100), [70, 10, 20]);
        assert_eq!(lens(101), [70, 10, 21]);
        assert!(matches!(split_ranges(10, f, 24), Err(DataError::TooShort { .. })));
        let bad = SplitFractions {
            train: 0.5,
            valid: 0.1,
            test: 0.1,
        };
        assert!(matches!(split_ranges(100, bad, 1), Err(DataError::InvalidFractions(_))));
    }

    #[test]
    fn scaler_example_and_round_trip() {
        let p = TimeSeriesPanel::from_values(t0(), vec!["a".into()], vec!["speed".into()], vec![10.0, 20.0, 30.0])
            .unwrap();
        let s = fit_scaler(&p).unwrap();
        assert_eq!(s.mean, vec![20.0]);
        assert!((s.std[0] - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let z = s.transform(&p).unwrap();
        assert!((z.values()[0] + 1.224744871391589).abs() < 1e-12);
        assert_eq!(z.values()[1], 0.0);
        let mut back = z.values().to_vec();
        s.inverse_transform(&mut back, &[0]);
        for (a, b) in back.iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn standardized_data_is_a_fixed_point() {
        let v = vec![-1.0, 1.0, -1.0, 1.0];
        let p = TimeSeriesPanel::from_values(t0(), vec!["a".into()], vec!["speed".into()], v.clone()).unwrap();
        let z = fit_scaler(&p).unwrap().transform(&p).unwrap();
        for (a, b) in z.values().iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let p = TimeSeriesPanel::from_values(t0(), vec!["a".into()], vec!["flow".into()], vec![5.0; 4]).unwrap();
        assert!(matches!(fit_scaler(&p), Err(DataError::DegenerateScale(_))));
    }

    #[test]
    fn scaler_ignores_test_ticks() {
        let p = ramp(100, 2);
        let [train, _, _] = split(&p, SplitFractions::default(), 1).unwrap();
        let s1 = fit_scaler(&train).unwrap();
        let mut q = p.clone();
        for t in 80..100 {
            q.set(t, 0, 0, 1e6);
        }
        let [train2, _, _] = split(&q, SplitFractions::default(), 1).unwrap();
        assert_eq!(fit_scaler(&train2).unwrap(), s1);
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(48, 1), 12, 12, 1).unwrap().len(), 25);
        assert_eq!(make_windows(&ramp(24, 1), 12, 12, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp(48, 1), 12, 12, 12).unwrap().starts, vec![0, 12, 24]);
        assert!(make_windows(&ramp(23, 1), 12, 12, 1).is_err());
    }

    #[test]
    fn sample_and_batch_layout() {
        let p = ramp(10, 2);
        let w = make_windows(&p, 3, 2, 1).unwrap().with_features(vec![0, 1], vec![1]).unwrap();
        let (x, y) = w.sample(4);
        assert_eq!(x.shape(), &[3, 2, 2]);
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(x.values()[0], p.get(4, 0, 0));
        assert_eq!(y.values()[1], p.get(7, 1, 1));
        let (xs, ys) = w.batch(&[4, 0]);
        assert_eq!(xs.len(), 3);
        assert_eq!(xs[1].shape(), &[4, 2]);
        // second sample, node 1, step 1
        assert_eq!(xs[1].get(3, 1), p.get(1, 1, 1));
        assert_eq!(ys[0].get(1, 0), p.get(7, 1, 1));
    }

    #[test]
    fn partition_slices() {
        let p = ramp(30, 4);
        let g = SensorGraph::new(
            p.sensor_ids().to_vec(),
            crate::numcore::SparseMatrix::from_triples(4, 4, [(0, 1, 1.0), (1, 3, 1.0), (3, 2, 1.0)]).unwrap(),
            1.0,
            Default::default(),
        )
        .unwrap();
        let whole = extract_subgraphs(&g, &PartitionAssignment::new(vec![0; 4], 1), &[vec![]]).unwrap();
        assert_eq!(slice_for_partition(&p, &whole[0]).unwrap(), p);

        let a = PartitionAssignment::new(vec![0, 1, 0, 1], 2);
        let bundles = extract_subgraphs(&g, &a, &[vec![], vec![0]]).unwrap();
        let s = slice_for_partition(&p, &bundles[1]).unwrap();
        assert_eq!(s.sensor_ids(), &["s1".to_string(), "s3".into(), "s0".into()]);
        assert_eq!(s.get(5, 1, 0), p.get(5, 3, 0));
        assert_eq!(s.sensor_ids().iter().filter(|id| *id == "s0").count(), 1);

        let other = p.select_nodes(&[0, 1]);
        assert!(matches!(slice_for_partition(&other, &bundles[1]), Err(DataError::MissingNode(_))));
    }

    proptest! {
        #[test]
        fn windows_commute_with_slicing(nt in 5usize..30, t1 in 1usize..4, t2 in 1usize..4, pick in 0usize..4) {
            prop_assume!(nt >= t1 + t2);
            let p = ramp(nt, 4);
            let nodes = [pick, (pick + 2) % 4];
            let whole = make_windows(&p, t1, t2, 1).unwrap();
            let sliced = make_windows(&p.select_nodes(&nodes), t1, t2, 1).unwrap();
            prop_assert_eq!(whole.len(), nt - (t1 + t2) + 1);
            prop_assert_eq!(whole.len(), sliced.len());
            for i in 0..whole.len() {
                let (x, _) = whole.sample(i);
                let (xs, _) = sliced.sample(i);
                for t in 0..t1 {
                    for (j, &n) in nodes.iter().enumerate() {
                        for f in 0..2 {
                            prop_assert_eq!(xs.values()[(t * 2 + j) * 2 + f], x.values()[(t * 4 + n) * 2 + f]);
                        }
                    }
                }
            }
        }
    }
}
