use std::sync::Arc;

use super::{CellVars, GateVars, ModelError};
use crate::numcore::{NumError, SparseMatrix, Tape, Var};

/// `[S_0⁰Z | S_0¹Z | … | S_1⁰Z | …]`, one column block per `(dir, d)` with
/// `d` in `0..k`.
pub fn diffusion_features(tape: &mut Tape, supports: &[Arc<SparseMatrix>], k: usize, z: Var) -> Result<Var, NumError> {
    let mut blocks = Vec::with_capacity(supports.len() * k);
    for s in supports {
        let mut x = z;
        blocks.push(x);
        for _ in 1..k {
            x = tape.spmm(s, x)?;
            blocks.push(x);
        }
    }
    if blocks.len() == 1 {
        return Ok(blocks[0]);
    }
    tape.concat_cols(&blocks)
}

/// `Σ_dir Σ_d S_dir^d Z W_{d,dir} + b` with the blocks stacked in `weight`.
pub fn diffusion_conv(
    tape: &mut Tape,
    supports: &[Arc<SparseMatrix>],
    k: usize,
    z: Var,
    weight: Var,
    bias: Var,
) -> Result<Var, NumError> {
    let f = diffusion_features(tape, supports, k, z)?;
    gate_linear(tape, f, GateVars { weight, bias })
}

fn gate_linear(tape: &mut Tape, features: Var, g: GateVars) -> Result<Var, NumError> {
    let y = tape.matmul(features, g.weight)?;
    tape.add_row_bias(y, g.bias)
}

/// One DCGRU step on `x: [rows × P]`, `h: [rows × units]`.
pub fn dcgru_cell(
    tape: &mut Tape,
    supports: &[Arc<SparseMatrix>],
    k: usize,
    x: Var,
    h: Var,
    cell: &CellVars,
) -> Result<Var, ModelError> {
    let xh = tape.concat_cols(&[x, h])?;
    let f = diffusion_features(tape, supports, k, xh)?;
    let r = gate_linear(tape, f, cell.reset)?;
    let r = tape.sigmoid(r)?;
    let u = gate_linear(tape, f, cell.update)?;
    let u = tape.sigmoid(u)?;
    let rh = tape.hadamard(r, h)?;
    let xrh = tape.concat_cols(&[x, rh])?;
    let fc = diffusion_features(tape, supports, k, xrh)?;
    let c = gate_linear(tape, fc, cell.candidate)?;
    let c = tape.tanh(c)?;
    let keep = tape.hadamard(u, h)?;
    let one_minus_u = tape.sub_from_one(u)?;
    let fresh = tape.hadamard(one_minus_u, c)?;
    let h_new = tape.add(keep, fresh)?;
    if !tape.value(h_new).is_finite() {
        return Err(ModelError::NumericalDivergence("non-finite hidden state".into()));
    }
    Ok(h_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::DenseTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseTensor {
        DenseTensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dense_pow(s: &DenseTensor, d: usize) -> DenseTensor {
        let n = s.rows();
        let mut out = DenseTensor::zeros(vec![n, n]);
        for i in 0..n {
            out.set(i, i, 1.0);
        }
        for _ in 0..d {
            out = out.matmul(s).unwrap();
        }
        out
    }

    #[test]
    fn diffusion_conv_matches_dense_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let (c, q, k) = (3, 2, 3);
        let mut triples = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.4) {
                    triples.push((i, j, rng.gen_range(0.1..1.0)));
                }
            }
        }
        let a = SparseMatrix::from_triples(n, n, triples).unwrap();
        let sups = [Arc::new(a.row_normalized()), Arc::new(a.transpose().row_normalized())];
        let z = rand_tensor(&mut rng, n, c);
        let w = rand_tensor(&mut rng, 2 * k * c, q);
        let b = rand_tensor(&mut rng, 1, q);

        let mut tape = Tape::new();
        let zv = tape.constant(z.clone()).unwrap();
        let wv = tape.constant(w.clone()).unwrap();
        let bv = tape.constant(b.clone()).unwrap();
        let y = diffusion_conv(&mut tape, &sups, k, zv, wv, bv).unwrap();
        let y = tape.value(y).clone();

        let mut expect = DenseTensor::zeros(vec![n, q]);
        for (dir, s) in sups.iter().enumerate() {
            let sd = s.to_dense();
            for d in 0..k {
                let blk = dir * k + d;
                let wb = DenseTensor::matrix(c, q, w.values()[blk * c * q..(blk + 1) * c * q].to_vec()).unwrap();
                let term = dense_pow(&sd, d).matmul(&z).unwrap().matmul(&wb).unwrap();
                for (e, t) in expect.values_mut().iter_mut().zip(term.values()) {
                    *e += t;
                }
            }
        }
        for i in 0..n {
            for j in 0..q {
                assert!((y.get(i, j) - expect.get(i, j) - b.get(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k_one_is_node_wise_linear() {
        let sups = [Arc::new(SparseMatrix::identity(2))];
        let mut tape = Tape::new();
        let z = tape.constant(DenseTensor::matrix(2, 1, vec![1.0, 2.0]).unwrap()).unwrap();
        let w = tape.constant(DenseTensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let b = tape.constant(DenseTensor::matrix(1, 1, vec![0.5]).unwrap()).unwrap();
        let y = diffusion_conv(&mut tape, &sups, 1, z, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[3.5, 6.5]);
    }

    fn zero_cell(tape: &mut Tape, c: usize, units: usize, m: usize, gate_bias: f64) -> CellVars {
        let mut gate = |bias: f64| GateVars {
            weight: tape.parameter(DenseTensor::zeros(vec![c * m, units])).unwrap(),
            bias: tape.parameter(DenseTensor::filled(vec![1, units], bias)).unwrap(),
        };
        let reset = gate(gate_bias);
        let update = gate(gate_bias);
        let candidate = gate(0.0);
        CellVars {
            units,
            reset,
            update,
            candidate,
        }
    }

    #[test]
    fn zero_weights_shrink_state_by_sigmoid_of_bias() {
        let sups = [Arc::new(SparseMatrix::identity(3))];
        let mut tape = Tape::new();
        let cell = zero_cell(&mut tape, 1 + 2, 2, 1, 0.0);
        let x = tape.constant(DenseTensor::filled(vec![3, 1], 0.7)).unwrap();
        let h = tape.constant(DenseTensor::filled(vec![3, 2], 0.8)).unwrap();
        let h1 = dcgru_cell(&mut tape, &sups, 1, x, h, &cell).unwrap();
        // u = 0.5, c = tanh(0) = 0
        assert!(tape.value(h1).values().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn zero_state_zero_weights_stays_zero() {
        let sups = [Arc::new(SparseMatrix::identity(2))];
        let mut tape = Tape::new();
        let cell = zero_cell(&mut tape, 1 + 4, 4, 1, 1.0);
        let x = tape.constant(DenseTensor::filled(vec![2, 1], 1.0)).unwrap();
        let h = tape.constant(DenseTensor::zeros(vec![2, 4])).unwrap();
        let h1 = dcgru_cell(&mut tape, &sups, 1, x, h, &cell).unwrap();
        assert!(tape.value(h1).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_state_is_reported() {
        let sups = [Arc::new(SparseMatrix::identity(1))];
        let mut tape = Tape::new();
        let cell = zero_cell(&mut tape, 2, 1, 1, 0.0);
        let x = tape.constant(DenseTensor::filled(vec![1, 1], 0.0)).unwrap();
        let h = tape.constant(DenseTensor::filled(vec![1, 1], f64::NAN)).unwrap();
        assert!(matches!(
            dcgru_cell(&mut tape, &sups, 1, x, h, &cell),
            Err(ModelError::NumericalDivergence(_))
        ));
    }
}
