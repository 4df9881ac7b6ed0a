use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{dcgru_cell, CellVars, ModelError, ParamVars};
use crate::numcore::{DenseTensor, NumError, SparseMatrix, Tape, Var};

pub const DEFAULT_TAU: f64 = 40.0;

/// Inverse-sigmoid decay `τ / (τ + exp(i/τ))` at global iteration `i`.
pub fn sampling_probability(iteration: u64, tau: f64) -> f64 {
    tau / (tau + (iteration as f64 / tau).exp())
}

/// Runs the encoder stack over `inputs` (each `[rows × P]`) from zero state
/// and returns the final hidden state of every layer.
pub fn encode(
    tape: &mut Tape,
    supports: &[Arc<SparseMatrix>],
    k: usize,
    inputs: &[Var],
    cells: &[CellVars],
    look_back: usize,
) -> Result<Vec<Var>, ModelError> {
    if inputs.len() != look_back {
        return Err(ModelError::SequenceLength {
            expected: look_back,
            got: inputs.len(),
        });
    }
    let rows = tape.value(inputs[0]).rows();
    let mut states = cells
        .iter()
        .map(|c| tape.constant(DenseTensor::zeros(vec![rows, c.units])))
        .collect::<Result<Vec<_>, _>>()?;
    for &x in inputs {
        let mut layer_in = x;
        for (state, cell) in states.iter_mut().zip(cells) {
            *state = dcgru_cell(tape, supports, k, layer_in, *state, cell)?;
            layer_in = *state;
        }
    }
    Ok(states)
}

/// Autoregressive decoder seeded with a zero GO frame.
///
/// Before each step after the first, the input is `targets[t-1]` with
/// probability `epsilon` (one draw per step from `rng`), else the previous
/// projected prediction. Returns one `[rows × Q]` prediction per step.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    tape: &mut Tape,
    supports: &[Arc<SparseMatrix>],
    k: usize,
    init_states: Vec<Var>,
    targets: Option<&[Var]>,
    params: &ParamVars,
    horizon: usize,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<Var>, ModelError> {
    if epsilon > 0.0 && targets.is_none() {
        return Err(ModelError::TargetsRequired);
    }
    if let Some(t) = targets {
        if t.len() != horizon {
            return Err(ModelError::SequenceLength {
                expected: horizon,
                got: t.len(),
            });
        }
    }
    let q = tape.value(params.proj_weight).cols();
    let rows = tape.value(init_states[0]).rows();
    let mut input = tape.constant(DenseTensor::zeros(vec![rows, q]))?;
    let mut states = init_states;
    let mut preds = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let mut layer_in = input;
        for (state, cell) in states.iter_mut().zip(&params.decoder) {
            *state = dcgru_cell(tape, supports, k, layer_in, *state, cell)?;
            layer_in = *state;
        }
        let y = tape.matmul(layer_in, params.proj_weight)?;
        let y = tape.add_row_bias(y, params.proj_bias)?;
        preds.push(y);
        if step + 1 < horizon {
            let teacher = match targets {
                Some(_) if epsilon >= 1.0 => true,
                Some(_) if epsilon > 0.0 => rng.gen::<f64>() < epsilon,
                _ => false,
            };
            input = if teacher { targets.expect("checked above")[step] } else { y };
        }
    }
    Ok(preds)
}

/// Encoder then decoder; `inputs` has `look_back` frames.
#[allow(clippy::too_many_arguments)]
pub fn seq2seq_forward(
    tape: &mut Tape,
    supports: &[Arc<SparseMatrix>],
    k: usize,
    params: &ParamVars,
    inputs: &[Var],
    targets: Option<&[Var]>,
    look_back: usize,
    horizon: usize,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<Var>, ModelError> {
    let states = encode(tape, supports, k, inputs, &params.encoder, look_back)?;
    decode(tape, supports, k, states, targets, params, horizon, epsilon, rng)
}

/// Mean absolute deviation over all elements.
pub fn loss_mae(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, NumError> {
    tape.mean_abs_diff(pred, target)
}

/// Sum of per-column MAEs.
pub fn loss_multi(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, NumError> {
    let q = tape.value(pred).cols();
    if q == 1 {
        return loss_mae(tape, pred, target);
    }
    if tape.value(target).shape() != tape.value(pred).shape() {
        return Err(NumError::ShapeMismatch(format!(
            "loss_multi {:?} vs {:?}",
            tape.value(pred).shape(),
            tape.value(target).shape()
        )));
    }
    let mut total: Option<Var> = None;
    for j in 0..q {
        let p = tape.slice_cols(pred, j, j + 1)?;
        let t = tape.slice_cols(target, j, j + 1)?;
        let l = tape.mean_abs_diff(p, t)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    Ok(total.expect("q >= 2"))
}

/// Plain MAE on slices of equal length.
pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "mae length mismatch");
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Per-feature MAEs of row-major data with `q` interleaved columns, summed.
pub fn mae_multi(pred: &[f64], target: &[f64], q: usize) -> f64 {
    assert_eq!(pred.len(), target.len(), "mae length mismatch");
    (0..q)
        .map(|j| {
            let p: Vec<f64> = pred.iter().skip(j).step_by(q).copied().collect();
            let t: Vec<f64> = target.iter().skip(j).step_by(q).copied().collect();
            mae(&p, &t)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SensorGraph;
    use crate::model::{build_supports, DcgruParams, FilterType, Seq2SeqConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(q: usize) -> (Seq2SeqConfig, DcgruParams, Vec<Arc<SparseMatrix>>) {
        let cfg = Seq2SeqConfig {
            input_dim: 2,
            output_dim: q,
            look_back: 3,
            horizon: 4,
            layers: 2,
            units: 4,
            max_diffusion_step: 2,
            filter_type: FilterType::DualRandomWalk,
        };
        let g = SensorGraph::from_edges(3, &[(0, 1, 0.5), (1, 2, 1.0), (2, 0, 0.3), (1, 0, 0.9)]).unwrap();
        let sups = build_supports(&g, cfg.filter_type, cfg.max_diffusion_step).batched(1);
        (cfg, DcgruParams::init(&cfg, 11).unwrap(), sups)
    }

    fn frames(tape: &mut Tape, n: usize, rows: usize, cols: usize, offset: f64) -> Vec<Var> {
        (0..n)
            .map(|t| {
                let v = (0..rows * cols).map(|i| ((i + t) as f64 * 0.37 + offset).sin()).collect();
                tape.constant(DenseTensor::matrix(rows, cols, v).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn schedule_decays_from_near_one() {
        assert!((sampling_probability(0, 40.0) - 40.0 / 41.0).abs() < 1e-15);
        let mut prev = 1.0;
        for i in [0, 10, 100, 200, 400] {
            let e = sampling_probability(i, 40.0);
            assert!(e < prev && e > 0.0);
            prev = e;
        }
        assert!(sampling_probability(1000, 40.0) < 1e-9);
    }

    #[test]
    fn wrong_sequence_length() {
        let (cfg, p, sups) = setup(1);
        let mut tape = Tape::new();
        let vars = p.record(&mut tape).unwrap();
        let x = frames(&mut tape, 2, 3, 2, 0.0);
        assert!(matches!(
            encode(&mut tape, &sups, cfg.max_diffusion_step, &x, &vars.encoder, cfg.look_back),
            Err(ModelError::SequenceLength { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn targets_required_for_positive_epsilon() {
        let (_, p, sups) = setup(1);
        let mut tape = Tape::new();
        let vars = p.record(&mut tape).unwrap();
        let x = frames(&mut tape, 3, 3, 2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = seq2seq_forward(&mut tape, &sups, 2, &vars, &x, None, 3, 4, 0.5, &mut rng);
        assert_eq!(r, Err(ModelError::TargetsRequired));
    }

    fn run(eps: f64, seed: u64, target_offset: f64) -> Vec<DenseTensor> {
        let (cfg, p, sups) = setup(1);
        let mut tape = Tape::new();
        let vars = p.record(&mut tape).unwrap();
        let x = frames(&mut tape, 3, 3, 2, 0.0);
        let y = frames(&mut tape, 4, 3, 1, target_offset);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds = seq2seq_forward(&mut tape, &sups, 2, &vars, &x, Some(&y), cfg.look_back, cfg.horizon, eps, &mut rng)
            .unwrap();
        preds.iter().map(|&v| tape.value(v).clone()).collect()
    }

    #[test]
    fn epsilon_zero_ignores_targets() {
        assert_eq!(run(0.0, 1, 0.0), run(0.0, 2, 5.0));
    }

    #[test]
    fn teacher_forcing_uses_targets() {
        let a = run(1.0, 1, 0.0);
        let b = run(1.0, 1, 5.0);
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
    }

    #[test]
    fn mixed_sampling_reproducible() {
        assert_eq!(run(0.5, 7, 0.0), run(0.5, 7, 0.0));
    }

    #[test]
    fn mae_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(DenseTensor::matrix(1, 2, vec![0.0, 2.0]).unwrap()).unwrap();
        let t = tape.constant(DenseTensor::matrix(1, 2, vec![1.0, 4.0]).unwrap()).unwrap();
        let l = loss_mae(&mut tape, p, t).unwrap();
        assert_eq!(tape.value(l).values(), &[1.5]);
        let same = loss_mae(&mut tape, p, p).unwrap();
        assert_eq!(tape.value(same).values(), &[0.0]);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 4.0]), 1.5);
    }

    #[test]
    fn multi_is_sum_of_feature_maes() {
        let mut tape = Tape::new();
        // column 0 errors 0.5, column 1 errors 1.0
        let p = tape.constant(DenseTensor::matrix(2, 2, vec![0.5, 1.0, 0.5, -1.0]).unwrap()).unwrap();
        let t = tape.constant(DenseTensor::zeros(vec![2, 2])).unwrap();
        let l = loss_multi(&mut tape, p, t).unwrap();
        assert!((tape.value(l).values()[0] - 1.5).abs() < 1e-15);
        assert!((mae_multi(&[0.5, 1.0, 0.5, -1.0], &[0.0; 4], 2) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn two_output_decoder_shapes() {
        let (cfg, p, sups) = setup(2);
        let mut tape = Tape::new();
        let vars = p.record(&mut tape).unwrap();
        let x = frames(&mut tape, 3, 3, 2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let preds = seq2seq_forward(&mut tape, &sups, 2, &vars, &x, None, 3, cfg.horizon, 0.0, &mut rng).unwrap();
        assert_eq!(preds.len(), 4);
        assert_eq!(tape.value(preds[3]).shape(), &[3, 2]);
    }
}
