//! Reverse-mode differentiation over rank-2 tensors.
//!
//! Every primitive appends one node to the tape; nodes are stored in creation
//! order, which is a topological order, so the backward sweep is a single
//! reverse pass.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::{matmul_a_bt_into, matmul_at_b_into};
use super::{DenseTensor, NumError, SparseMatrix};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Hadamard,
    Add,
    SubFromOne,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Spmm(Arc<SparseMatrix>, usize),
    Add(usize, usize),
    AddRowBias(usize, usize),
    Hadamard(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    SubFromOne(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    MeanAbsDiff(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: DenseTensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_rank2(t: &DenseTensor) -> Result<(), NumError> {
    if t.shape().len() != 2 {
        return Err(NumError::ShapeMismatch(format!(
            "tape values must be rank 2, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn same_shape(a: &DenseTensor, b: &DenseTensor, what: &str) -> Result<(), NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, NumError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NumError::NotOnTape);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: DenseTensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Records a trainable leaf; gradients are reported for it.
    pub fn parameter(&mut self, value: DenseTensor) -> Result<Var, NumError> {
        check_rank2(&value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Records a constant leaf (inputs, targets).
    pub fn constant(&mut self, value: DenseTensor) -> Result<Var, NumError> {
        check_rank2(&value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        let i = self.idx(v).expect("variable belongs to this tape");
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::MatMul(ia, ib), rg))
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var, NumError> {
        let ix = self.idx(x)?;
        let value = s.spmm(&self.nodes[ix].value)?;
        let rg = self.rg(ix);
        Ok(self.push(value, Op::Spmm(Arc::clone(s), ix), rg))
    }

    /// Applies one of the elementwise primitives. Unary variants ignore `args[1..]`.
    pub fn elementwise(&mut self, f: Elementwise, args: &[Var]) -> Result<Var, NumError> {
        let arity = match f {
            Elementwise::Hadamard | Elementwise::Add => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(NumError::ShapeMismatch(format!(
                "{f:?} takes {arity} arguments, got {}",
                args.len()
            )));
        }
        match f {
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::SubFromOne => self.sub_from_one(args[0]),
            Elementwise::Hadamard => self.hadamard(args[0], args[1]),
            Elementwise::Add => self.add(args[0], args[1]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        same_shape(&self.nodes[ia].value, &self.nodes[ib].value, "add")?;
        let vals = self.nodes[ia]
            .value
            .values()
            .iter()
            .zip(self.nodes[ib].value.values())
            .map(|(x, y)| x + y)
            .collect();
        let value = DenseTensor::new(self.nodes[ia].value.shape().to_vec(), vals)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Add(ia, ib), rg))
    }

    /// `x + 1·biasᵀ`: adds a `1×c` row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (xv, bv) = (&self.nodes[ix].value, &self.nodes[ib].value);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(NumError::ShapeMismatch(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let c = xv.cols();
        let mut vals = xv.values().to_vec();
        for row in vals.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(bv.values()) {
                *v += b;
            }
        }
        let value = DenseTensor::new(xv.shape().to_vec(), vals)?;
        let rg = self.rg(ix) || self.rg(ib);
        Ok(self.push(value, Op::AddRowBias(ix, ib), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        same_shape(&self.nodes[ia].value, &self.nodes[ib].value, "hadamard")?;
        let vals = self.nodes[ia]
            .value
            .values()
            .iter()
            .zip(self.nodes[ib].value.values())
            .map(|(x, y)| x * y)
            .collect();
        let value = DenseTensor::new(self.nodes[ia].value.shape().to_vec(), vals)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Hadamard(ia, ib), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var, NumError> {
        let ix = self.idx(x)?;
        let xv = &self.nodes[ix].value;
        let value = DenseTensor::new(xv.shape().to_vec(), xv.values().iter().map(|&v| f(v)).collect())?;
        let rg = self.rg(ix);
        Ok(self.push(value, op(ix), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(x, f64::tanh, Op::Tanh)
    }

    /// `1 − x`.
    pub fn sub_from_one(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(x, |v| 1.0 - v, Op::SubFromOne)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::ShapeMismatch("concat of nothing".into()));
        }
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_, _>>()?;
        let rows = self.nodes[ids[0]].value.rows();
        if ids.iter().any(|&i| self.nodes[i].value.rows() != rows) {
            return Err(NumError::ShapeMismatch("concat_cols row counts differ".into()));
        }
        let total: usize = ids.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut vals = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &ids {
                let v = &self.nodes[i].value;
                let c = v.cols();
                vals.extend_from_slice(&v.values()[r * c..(r + 1) * c]);
            }
        }
        let rg = ids.iter().any(|&i| self.rg(i));
        let value = DenseTensor::matrix(rows, total, vals)?;
        Ok(self.push(value, Op::ConcatCols(ids), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::ShapeMismatch("concat of nothing".into()));
        }
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_, _>>()?;
        let cols = self.nodes[ids[0]].value.cols();
        if ids.iter().any(|&i| self.nodes[i].value.cols() != cols) {
            return Err(NumError::ShapeMismatch("concat_rows column counts differ".into()));
        }
        let mut vals = Vec::new();
        let mut rows = 0;
        for &i in &ids {
            vals.extend_from_slice(self.nodes[i].value.values());
            rows += self.nodes[i].value.rows();
        }
        let rg = ids.iter().any(|&i| self.rg(i));
        let value = DenseTensor::matrix(rows, cols, vals)?;
        Ok(self.push(value, Op::ConcatRows(ids), rg))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let ix = self.idx(x)?;
        let xv = &self.nodes[ix].value;
        if start >= end || end > xv.cols() {
            return Err(NumError::ShapeMismatch(format!(
                "slice [{start},{end}) of {} columns",
                xv.cols()
            )));
        }
        let c = xv.cols();
        let w = end - start;
        let mut vals = Vec::with_capacity(xv.rows() * w);
        for row in xv.values().chunks(c) {
            vals.extend_from_slice(&row[start..end]);
        }
        let value = DenseTensor::matrix(xv.rows(), w, vals)?;
        let rg = self.rg(ix);
        Ok(self.push(value, Op::SliceCols(ix, start), rg))
    }

    /// Scalar `mean(|pred − target|)`.
    pub fn mean_abs_diff(&mut self, pred: Var, target: Var) -> Result<Var, NumError> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        same_shape(&self.nodes[ip].value, &self.nodes[it].value, "mean_abs_diff")?;
        let p = self.nodes[ip].value.values();
        let t = self.nodes[it].value.values();
        if p.is_empty() {
            return Err(NumError::ShapeMismatch("mean of empty tensor".into()));
        }
        let mae = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
        let rg = self.rg(ip) || self.rg(it);
        Ok(self.push(DenseTensor::scalar(mae), Op::MeanAbsDiff(ip, it), rg))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let il = self.idx(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(NumError::ShapeMismatch(format!(
                "loss must be scalar, got {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; il + 1];
        grads[il] = Some(vec![1.0]);

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes[..=il].iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn slot(grads: &mut [Option<Vec<f64>>], j: usize, len: usize) -> &mut Vec<f64> {
            grads[j].get_or_insert_with(|| vec![0.0; len])
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    matmul_a_bt_into(g, bv.values(), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    matmul_at_b_into(av.values(), g, gb, m, k, n);
                }
            }
            Op::Spmm(s, x) => {
                if self.rg(*x) {
                    let xv = &self.nodes[*x].value;
                    let c = xv.cols();
                    let gx = slot(grads, *x, xv.len());
                    s.spmm_transpose_into(g, gx, c);
                }
            }
            Op::Add(a, b) => {
                for &j in [a, b] {
                    if self.rg(j) {
                        let gj = slot(grads, j, g.len());
                        for (o, v) in gj.iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                }
            }
            Op::AddRowBias(x, b) => {
                if self.rg(*x) {
                    let gx = slot(grads, *x, g.len());
                    for (o, v) in gx.iter_mut().zip(g) {
                        *o += v;
                    }
                }
                if self.rg(*b) {
                    let c = self.nodes[*b].value.cols();
                    let gb = slot(grads, *b, c);
                    for row in g.chunks(c) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.nodes[*a].value.values(), self.nodes[*b].value.values());
                if self.rg(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * bv;
                    }
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * av;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.values();
                let gx = slot(grads, *x, g.len());
                for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.values();
                let gx = slot(grads, *x, g.len());
                for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::SubFromOne(x) => {
                let gx = slot(grads, *x, g.len());
                for (o, gv) in gx.iter_mut().zip(g) {
                    *o -= gv;
                }
            }
            Op::ConcatCols(ids) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &j in ids {
                    let c = self.nodes[j].value.cols();
                    if self.rg(j) {
                        let gj = slot(grads, j, rows * c);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            for (o, v) in gj[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &j in ids {
                    let len = self.nodes[j].value.len();
                    if self.rg(j) {
                        let gj = slot(grads, j, len);
                        for (o, v) in gj.iter_mut().zip(&g[offset..offset + len]) {
                            *o += v;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = &self.nodes[*x].value;
                let c = xv.cols();
                let w = node.value.cols();
                let gx = slot(grads, *x, xv.len());
                for (r, row) in g.chunks(w).enumerate() {
                    for (o, v) in gx[r * c + start..r * c + start + w].iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Op::MeanAbsDiff(p, t) => {
                let pv = self.nodes[*p].value.values();
                let tv = self.nodes[*t].value.values();
                let scale = g[0] / pv.len() as f64;
                let signs: Vec<f64> = pv
                    .iter()
                    .zip(tv)
                    .map(|(a, b)| {
                        let d = a - b;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.rg(*p) {
                    let gp = slot(grads, *p, pv.len());
                    for (o, s) in gp.iter_mut().zip(&signs) {
                        *o += s;
                    }
                }
                if self.rg(*t) {
                    let gt = slot(grads, *t, tv.len());
                    for (o, s) in gt.iter_mut().zip(&signs) {
                        *o -= s;
                    }
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Result<DenseTensor, NumError> {
        if v.tape != self.tape {
            return Err(NumError::NotOnTape);
        }
        let Some(shape) = self.shapes.get(v.index) else {
            // recorded after the loss: no influence
            return Err(NumError::NotOnTape);
        };
        match &self.grads[v.index] {
            Some(g) => DenseTensor::new(shape.clone(), g.clone()),
            None => Ok(DenseTensor::zeros(shape.clone())),
        }
    }
}
