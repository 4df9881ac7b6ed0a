use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::columns;
use super::{Checkpoint, EpochRecord, LossKind, TrainError, TrainReport, TrainingConfig};
use crate::data::{
    fit_scaler, make_windows, slice_for_partition, split_ranges, FeatureScaler, SplitFractions, TimeSeriesPanel,
    WindowedDataset,
};
use crate::model::{
    build_supports, loss_mae, loss_multi, sampling_probability, seq2seq_forward, DcgruParams, DiffusionSupports,
    ModelError,
};
use crate::numcore::{adam_step, clip_by_global_norm, AdamConfig, AdamState, DenseTensor, SparseMatrix, Tape};
use crate::partition::SubgraphBundle;

/// One partition's inputs: train/valid windows in normalized units, test
/// windows in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionData {
    pub bundle: SubgraphBundle,
    pub scaler: FeatureScaler,
    pub train: WindowedDataset,
    pub valid: WindowedDataset,
    pub test: WindowedDataset,
}

/// Slices `panel` (global node order, already imputed) to the bundle, splits
/// chronologically and fits the scaler on the training slice.
pub fn prepare_partition(
    panel: &TimeSeriesPanel,
    bundle: &SubgraphBundle,
    config: &TrainingConfig,
    fractions: SplitFractions,
) -> Result<PartitionData, TrainError> {
    config.validate()?;
    let local = slice_for_partition(panel, bundle)?;
    let m = &config.model;
    let [tr, va, te] = split_ranges(local.n_times(), fractions, m.look_back + m.horizon)?;
    let train_raw = local.slice_time(tr);
    let scaler = fit_scaler(&train_raw)?;
    let ins = columns(&scaler, &config.input_features)?;
    let outs = columns(&scaler, &config.output_features)?;
    let windows = |p: &TimeSeriesPanel, stride: usize| -> Result<WindowedDataset, TrainError> {
        Ok(make_windows(p, m.look_back, m.horizon, stride)?.with_features(ins.clone(), outs.clone())?)
    };
    Ok(PartitionData {
        bundle: bundle.clone(),
        train: windows(&scaler.transform(&train_raw)?, config.train_stride)?,
        valid: windows(&scaler.transform(&local.slice_time(va))?, 1)?,
        test: windows(&local.slice_time(te), 1)?,
        scaler,
    })
}

/// Block-diagonal supports per batch size.
pub(crate) struct SupportCache {
    supports: DiffusionSupports,
    by_batch: HashMap<usize, Vec<Arc<SparseMatrix>>>,
}

impl SupportCache {
    pub(crate) fn new(supports: DiffusionSupports) -> Self {
        Self {
            supports,
            by_batch: HashMap::new(),
        }
    }

    pub(crate) fn get(&mut self, batch: usize) -> Vec<Arc<SparseMatrix>> {
        let s = &self.supports;
        self.by_batch.entry(batch).or_insert_with(|| s.batched(batch)).clone()
    }

    pub(crate) fn max_diffusion_step(&self) -> usize {
        self.supports.max_diffusion_step
    }
}

pub(crate) struct StepOutput {
    pub loss: f64,
    pub grads: Option<Vec<DenseTensor>>,
    /// Per-step predictions `[B·N × Q]`, normalized units.
    pub preds: Option<Vec<DenseTensor>>,
}

/// Forward pass over one batch; gradients only when `backward`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_batch(
    params: &DcgruParams,
    sups: &mut SupportCache,
    inputs: Vec<DenseTensor>,
    targets: Vec<DenseTensor>,
    batch: usize,
    epsilon: f64,
    loss_kind: LossKind,
    rng: &mut ChaCha8Rng,
    backward: bool,
    keep_preds: bool,
) -> Result<StepOutput, ModelError> {
    let cfg = params.config;
    let supports = sups.get(batch);
    let mut tape = Tape::new();
    let vars = params.record(&mut tape)?;
    let x = inputs.into_iter().map(|t| tape.constant(t)).collect::<Result<Vec<_>, _>>()?;
    let y = targets.into_iter().map(|t| tape.constant(t)).collect::<Result<Vec<_>, _>>()?;
    let teacher = (epsilon > 0.0).then_some(y.as_slice());
    let preds = seq2seq_forward(
        &mut tape,
        &supports,
        sups.max_diffusion_step(),
        &vars,
        &x,
        teacher,
        cfg.look_back,
        cfg.horizon,
        epsilon,
        rng,
    )?;
    let pred = tape.concat_rows(&preds)?;
    let target = tape.concat_rows(&y)?;
    let loss = match loss_kind {
        LossKind::Mae => loss_mae(&mut tape, pred, target)?,
        LossKind::MaeMulti => loss_multi(&mut tape, pred, target)?,
    };
    let value = tape.value(loss).values()[0];
    if !value.is_finite() {
        return Err(ModelError::NumericalDivergence(format!("loss is {value}")));
    }
    let grads = if backward {
        let g = tape.backward(loss)?;
        Some(vars.flat().into_iter().map(|v| g.get(v)).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    let preds = keep_preds.then(|| preds.iter().map(|&p| tape.value(p).clone()).collect());
    Ok(StepOutput { loss: value, grads, preds })
}

/// Mean loss over all windows with ε = 0.
pub(crate) fn eval_loss(
    params: &DcgruParams,
    sups: &mut SupportCache,
    data: &WindowedDataset,
    batch_size: usize,
    loss_kind: LossKind,
) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size) {
        let (x, y) = data.batch(chunk);
        let out = run_batch(params, sups, x, y, chunk.len(), 0.0, loss_kind, &mut rng, false, false)?;
        total += out.loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Minibatch Adam with scheduled sampling, clipping, step decay and early
/// stopping; the returned checkpoint holds the best-validation parameters.
pub fn train_partition(
    data: &PartitionData,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    config.validate()?;
    let part = data.bundle.part;
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(TrainError::Config(format!("partition {part}: empty train or valid windows")));
    }
    let started = Instant::now();
    let m = config.model;
    let mut sups = SupportCache::new(build_supports(&data.bundle.graph, m.filter_type, m.max_diffusion_step));
    let mut params = DcgruParams::init(&m, seed)?;
    let mut adam = AdamState::zeros_like(&params.tensors().into_iter().cloned().collect::<Vec<_>>());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);
    let mut coin_rng = ChaCha8Rng::seed_from_u64(seed);
    coin_rng.set_stream(2);

    let mut iteration: u64 = 0;
    let mut epoch = 0usize;
    let diverged = |epoch: usize, iteration: u64, e: ModelError| match e {
        ModelError::NumericalDivergence(message) => TrainError::Divergence {
            part,
            epoch,
            iteration,
            message,
        },
        other => TrainError::Model(other),
    };

    let initial = eval_loss(&params, &mut sups, &data.valid, config.batch_size, config.loss)
        .map_err(|e| diverged(0, 0, e))?;
    let mut records = vec![EpochRecord {
        partition: part,
        epoch: 0,
        train_loss: f64::NAN,
        valid_loss: initial,
        lr: config.learning_rate_at(1),
        epsilon: sampling_probability(0, config.tau),
        seconds: started.elapsed().as_secs_f64(),
    }];
    let mut best = (initial, 0usize, params.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    while epoch < config.epochs {
        epoch += 1;
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0, 0usize);
        let mut epsilon = sampling_probability(iteration, config.tau);
        for chunk in order.chunks(config.batch_size) {
            epsilon = sampling_probability(iteration, config.tau);
            let (x, y) = data.train.batch(chunk);
            let out = run_batch(&params, &mut sups, x, y, chunk.len(), epsilon, config.loss, &mut coin_rng, true, false)
                .map_err(|e| diverged(epoch, iteration, e))?;
            let mut grads = out.grads.expect("backward requested");
            clip_by_global_norm(&mut grads, config.max_grad_norm);
            adam_step(&mut params.tensors_mut(), &grads, &mut adam, lr, AdamConfig::default());
            if params.tensors().iter().any(|t| !t.is_finite()) {
                return Err(diverged(epoch, iteration, ModelError::NumericalDivergence("non-finite parameters".into())));
            }
            total += out.loss * chunk.len() as f64;
            count += chunk.len();
            iteration += 1;
        }
        let valid = eval_loss(&params, &mut sups, &data.valid, config.batch_size, config.loss)
            .map_err(|e| diverged(epoch, iteration, e))?;
        records.push(EpochRecord {
            partition: part,
            epoch,
            train_loss: total / count as f64,
            valid_loss: valid,
            lr,
            epsilon,
            seconds: started.elapsed().as_secs_f64(),
        });
        if valid < best.0 {
            best = (valid, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_valid_loss, best_epoch, best_params) = best;
    let ckpt = Checkpoint::new(config, &best_params, &data.scaler, &data.bundle, iteration, best_epoch);
    let report = TrainReport {
        part,
        epochs: records,
        best_epoch,
        best_valid_loss,
        wall_seconds: started.elapsed().as_secs_f64(),
        iterations: iteration,
        stopped_early,
        test: None,
    };
    Ok((ckpt, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOutcome {
    pub part: usize,
    pub result: Result<(Checkpoint, TrainReport), TrainError>,
}

/// Trains every partition independently on up to `workers` threads; the
/// seed of partition `p` is `config.seed + p`. Output order follows `jobs`.
pub fn train_all(jobs: &[PartitionData], config: &TrainingConfig, workers: usize) -> Vec<PartitionOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<PartitionOutcome>>> = Mutex::new(vec![None; jobs.len()]);
    let run = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(job) = jobs.get(i) else { break };
        let part = job.bundle.part;
        let result = train_partition(job, config, config.seed.wrapping_add(part as u64));
        slots.lock().expect("no worker panics while holding the lock")[i] = Some(PartitionOutcome { part, result });
    };
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(run);
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::tests::t0;
    use crate::graph::SensorGraph;
    use crate::model::Seq2SeqConfig;
    use crate::partition::{extract_subgraphs, PartitionAssignment};
    use crate::training::{read_checkpoint, write_checkpoint, Forecaster};

    /// Ring graph with ids "0".."n-1", one bundle, no halos.
    pub(crate) fn ring_bundle(n: usize) -> SubgraphBundle {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        let g = SensorGraph::from_edges(n, &edges).unwrap();
        extract_subgraphs(&g, &PartitionAssignment::new(vec![0; n], 1), &[vec![]])
            .unwrap()
            .remove(0)
    }

    pub(crate) fn panel_from(n: usize, nt: usize, f: impl Fn(usize, usize) -> f64) -> TimeSeriesPanel {
        let ids = (0..n).map(|i| i.to_string()).collect();
        let values = (0..nt).flat_map(|t| (0..n).map(move |i| (t, i))).map(|(t, i)| f(t, i)).collect();
        TimeSeriesPanel::from_values(t0(), ids, vec!["speed".into()], values).unwrap()
    }

    pub(crate) fn small_config(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            model: Seq2SeqConfig {
                look_back: 3,
                horizon: 3,
                layers: 1,
                units: 8,
                ..Seq2SeqConfig::default()
            },
            batch_size: 16,
            epochs,
            patience: epochs,
            ..TrainingConfig::default()
        }
    }

    fn wave(t: usize, i: usize) -> f64 {
        50.0 + 5.0 * i as f64 + 3.0 * ((t as f64) * 0.3 + i as f64).sin()
    }

    #[test]
    fn per_node_constant_series_is_learned() {
        let panel = panel_from(4, 200, |_, i| 40.0 + 5.0 * i as f64);
        let b = ring_bundle(4);
        let cfg = small_config(20);
        let data = prepare_partition(&panel, &b, &cfg, SplitFractions::default()).unwrap();
        let (ckpt, report) = train_partition(&data, &cfg, 1).unwrap();
        // normalized units: std of {40,45,50,55} is about 5.6
        assert!(report.best_valid_loss < 0.05, "valid {}", report.best_valid_loss);
        let (x, _) = data.test.sample(0);
        let y = Forecaster::new(&ckpt).unwrap().forecast(&x).unwrap();
        for (k, v) in y.values().iter().enumerate() {
            let c = 40.0 + 5.0 * (k % 4) as f64;
            assert!((v - c).abs() < 0.5, "node {}: {v} vs {c}", k % 4);
        }
    }

    #[test]
    fn same_seed_same_curves_and_checkpoint() {
        let panel = panel_from(3, 150, wave);
        let cfg = small_config(3);
        let data = prepare_partition(&panel, &ring_bundle(3), &cfg, SplitFractions::default()).unwrap();
        let (a, ra) = train_partition(&data, &cfg, 5).unwrap();
        let (b, rb) = train_partition(&data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let losses = |r: &TrainReport| r.epochs.iter().map(|e| (e.train_loss.to_bits(), e.valid_loss.to_bits())).collect::<Vec<_>>();
        assert_eq!(losses(&ra), losses(&rb));
        let (c, _) = train_partition(&data, &cfg, 6).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let panel = panel_from(3, 150, wave);
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            ..small_config(3)
        };
        let data = prepare_partition(&panel, &ring_bundle(3), &cfg, SplitFractions::default()).unwrap();
        let (ckpt, report) = train_partition(&data, &cfg, 9).unwrap();
        assert_eq!(ckpt.model_params().unwrap(), DcgruParams::init(&cfg.model, 9).unwrap());
        assert!(report.iterations > 0);
    }

    #[test]
    fn report_invariants() {
        let panel = panel_from(3, 150, wave);
        let cfg = TrainingConfig {
            epochs: 6,
            milestones: vec![2, 4],
            ..small_config(6)
        };
        let data = prepare_partition(&panel, &ring_bundle(3), &cfg, SplitFractions::default()).unwrap();
        let (ckpt, r) = train_partition(&data, &cfg, 0).unwrap();
        assert_eq!(r.epochs[0].epoch, 0);
        let min = r.epochs.iter().map(|e| e.valid_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_valid_loss, min);
        assert_eq!(r.epochs[r.best_epoch].valid_loss, min);
        assert_eq!(ckpt.best_epoch, r.best_epoch);
        let lrs: Vec<f64> = r.epochs[1..].iter().map(|e| e.lr).collect();
        assert_eq!(lrs[0], 0.01);
        assert!((lrs[2] - 0.001).abs() < 1e-15 && (lrs[4] - 0.0001).abs() < 1e-16);
        let eps: Vec<f64> = r.epochs[1..].iter().map(|e| e.epsilon).collect();
        assert!(eps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let panel = panel_from(3, 150, wave);
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            patience: 2,
            ..small_config(50)
        };
        let data = prepare_partition(&panel, &ring_bundle(3), &cfg, SplitFractions::default()).unwrap();
        let (_, r) = train_partition(&data, &cfg, 0).unwrap();
        assert!(r.stopped_early);
        assert_eq!(r.epochs.len(), 3);
    }

    #[test]
    fn divergence_is_reported_with_context() {
        let panel = panel_from(3, 150, wave);
        let cfg = TrainingConfig {
            learning_rate: 1e306,
            ..small_config(3)
        };
        let data = prepare_partition(&panel, &ring_bundle(3), &cfg, SplitFractions::default()).unwrap();
        match train_partition(&data, &cfg, 0) {
            Err(TrainError::Divergence { part: 0, epoch: 1, .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|(_, r)| r.best_valid_loss)),
        }
    }

    #[test]
    fn parallel_matches_sequential_and_partitions_are_independent() {
        let panel = panel_from(6, 150, wave);
        let edges: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6, 1.0)).collect();
        let g = SensorGraph::from_edges(6, &edges).unwrap();
        let a = PartitionAssignment::new(vec![0, 0, 1, 1, 2, 2], 3);
        let bundles = extract_subgraphs(&g, &a, &[vec![2], vec![], vec![0]]).unwrap();
        let cfg = small_config(2);
        let jobs: Vec<_> = bundles
            .iter()
            .map(|b| prepare_partition(&panel, b, &cfg, SplitFractions::default()).unwrap())
            .collect();
        let seq = train_all(&jobs, &cfg, 1);
        let par = train_all(&jobs, &cfg, 3);
        let ckpts = |o: &[PartitionOutcome]| o.iter().map(|o| o.result.as_ref().unwrap().0.clone()).collect::<Vec<_>>();
        assert_eq!(ckpts(&seq), ckpts(&par));
        assert_eq!(seq.iter().map(|o| o.part).collect::<Vec<_>>(), vec![0, 1, 2]);

        // a different seed for partition 0 only
        let alone = train_partition(&jobs[1], &cfg, cfg.seed + 1).unwrap().0;
        assert_eq!(alone, ckpts(&seq)[1]);
        assert!(train_all(&[], &cfg, 4).is_empty());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let panel = panel_from(3, 150, wave);
        let cfg = small_config(2);
        let data = prepare_partition(&panel, &ring_bundle(3), &cfg, SplitFractions::default()).unwrap();
        let (ckpt, _) = train_partition(&data, &cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        write_checkpoint(&p, &ckpt).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back, ckpt);
        let (x, _) = data.test.sample(3);
        let a = Forecaster::new(&ckpt).unwrap().forecast(&x).unwrap();
        let b = Forecaster::new(&back).unwrap().forecast(&x).unwrap();
        let bits = |t: &DenseTensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(back.iteration, ckpt.iteration);
    }
}
