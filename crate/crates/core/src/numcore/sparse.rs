use serde::{Deserialize, Serialize};

use super::{DenseTensor, NumError};

/// Compressed-sparse-row matrix of `f64`.
///
/// Column indices are sorted within each row and explicit zeros are never
/// stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triples. Duplicates are summed
    /// and entries that end up exactly zero are dropped.
    pub fn from_triples(
        rows: usize,
        cols: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, NumError> {
        let mut entries: Vec<(usize, usize, f64)> = triples.into_iter().collect();
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(NumError::ShapeMismatch(format!(
                    "entry ({r},{c}) outside {rows}x{cols}"
                )));
            }
            if !v.is_finite() {
                return Err(NumError::NonFinite(format!("entry ({r},{c}) = {v}")));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_counts = vec![0usize; rows];
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            row_counts[r] += 1;
            last = Some((r, c));
        }
        // drop cancelled duplicates / zeros
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        let mut pos = 0;
        for (r, &count) in row_counts.iter().enumerate() {
            let mut kept = 0;
            for _ in 0..count {
                if values[pos] != 0.0 {
                    keep_idx.push(indices[pos]);
                    keep_val.push(values[pos]);
                    kept += 1;
                }
                pos += 1;
            }
            indptr[r + 1] = indptr[r] + kept;
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices: keep_idx,
            values: keep_val,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (idx, vals) = self.row(r);
            idx.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_triples(self.cols, self.rows, self.triples().map(|(r, c, v)| (c, r, v)))
            .expect("transpose of a valid matrix is valid")
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// Scales each row by `1 / row_sum`; rows summing to zero stay empty.
    pub fn row_normalized(&self) -> Self {
        let sums = self.row_sums();
        Self::from_triples(
            self.rows,
            self.cols,
            self.triples().map(|(r, c, v)| (r, c, v / sums[r])),
        )
        .expect("row normalization keeps entries finite")
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(vec![self.rows, self.cols]);
        for (r, c, v) in self.triples() {
            out.set(r, c, v);
        }
        out
    }

    /// `kron(I_copies, self)`: the same operator applied independently to
    /// `copies` stacked blocks of rows.
    pub fn block_diagonal(&self, copies: usize) -> Self {
        let mut indptr = Vec::with_capacity(self.rows * copies + 1);
        let mut indices = Vec::with_capacity(self.nnz() * copies);
        let mut values = Vec::with_capacity(self.nnz() * copies);
        indptr.push(0);
        for b in 0..copies {
            let offset = b * self.cols;
            for r in 0..self.rows {
                let (idx, vals) = self.row(r);
                indices.extend(idx.iter().map(|c| c + offset));
                values.extend_from_slice(vals);
                indptr.push(indices.len());
            }
        }
        Self {
            rows: self.rows * copies,
            cols: self.cols * copies,
            indptr,
            indices,
            values,
        }
    }

    /// Permutes rows and columns: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(self.rows, self.cols);
        Self::from_triples(
            self.rows,
            self.cols,
            self.triples().map(|(r, c, v)| (perm[r], perm[c], v)),
        )
        .expect("permutation keeps entries in range")
    }

    /// Sparse-dense product `self · x`.
    pub fn spmm(&self, x: &DenseTensor) -> Result<DenseTensor, NumError> {
        if x.shape().len() != 2 || x.rows() != self.cols {
            return Err(NumError::ShapeMismatch(format!(
                "spmm {}x{} by {:?}",
                self.rows,
                self.cols,
                x.shape()
            )));
        }
        let c = x.cols();
        let mut out = vec![0.0; self.rows * c];
        self.spmm_into(x.values(), &mut out, c);
        DenseTensor::matrix(self.rows, c, out)
    }

    pub(crate) fn spmm_into(&self, x: &[f64], out: &mut [f64], c: usize) {
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let out_row = &mut out[r * c..(r + 1) * c];
            for (&j, &w) in idx.iter().zip(vals) {
                let x_row = &x[j * c..(j + 1) * c];
                for (o, &xv) in out_row.iter_mut().zip(x_row) {
                    *o += w * xv;
                }
            }
        }
    }

    /// `out += selfᵀ · g` without materializing the transpose.
    pub(crate) fn spmm_transpose_into(&self, g: &[f64], out: &mut [f64], c: usize) {
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let g_row = &g[r * c..(r + 1) * c];
            for (&j, &w) in idx.iter().zip(vals) {
                let out_row = &mut out[j * c..(j + 1) * c];
                for (o, &gv) in out_row.iter_mut().zip(g_row) {
                    *o += w * gv;
                }
            }
        }
    }
}
