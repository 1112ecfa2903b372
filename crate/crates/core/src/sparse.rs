//! Compressed sparse row operators.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows shorter than this are applied sequentially.
const PAR_MIN_ROWS: usize = 4096;

/// Square sparse matrix in CSR layout with strictly increasing column
/// indices inside each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    offsets: Vec<u32>,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_parts(n: usize, offsets: Vec<u32>, indices: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        let bad = |why: String| Error::InvalidShape { shape: vec![n, n], reason: why };
        if offsets.len() != n + 1 || offsets[0] != 0 {
            return Err(bad(format!("expected {} row offsets starting at 0", n + 1)));
        }
        if offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(bad("row offsets must be nondecreasing".into()));
        }
        let nnz = offsets[n] as usize;
        if indices.len() != nnz || weights.len() != nnz {
            return Err(bad(format!(
                "{nnz} stored entries declared, {} indices and {} weights given",
                indices.len(),
                weights.len()
            )));
        }
        let m = CsrMatrix { n, offsets, indices, weights };
        for i in 0..n {
            let (cols, _) = m.row(i);
            if cols.iter().any(|&c| c as usize >= n) {
                return Err(bad(format!("row {i} has a column index out of range")));
            }
            if cols.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad(format!("row {i} column indices are not strictly increasing")));
            }
        }
        if m.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteInput("sparse weights"));
        }
        Ok(m)
    }

    /// Builds from per-row `(column, weight)` lists already in canonical order.
    pub(crate) fn from_sorted_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        offsets.push(0u32);
        for row in rows {
            for (c, w) in row {
                indices.push(c);
                weights.push(w);
            }
            offsets.push(indices.len() as u32);
        }
        CsrMatrix { n, offsets, indices, weights }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { n, offsets: (0..=n as u32).collect(), indices: (0..n as u32).collect(), weights: vec![1.0; n] }
    }

    /// Keeps every nonzero entry of a dense row-major `n x n` matrix.
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n);
        let rows = dense
            .chunks_exact(n)
            .map(|row| row.iter().enumerate().filter(|(_, &w)| w != 0.0).map(|(j, &w)| (j as u32, w)).collect())
            .collect();
        Self::from_sorted_rows(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.offsets[i] as usize, self.offsets[i + 1] as usize);
        (&self.indices[s..e], &self.weights[s..e])
    }

    pub fn row_len(&self, i: usize) -> usize {
        (self.offsets[i + 1] - self.offsets[i]) as usize
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, ws) = self.row(i);
        cols.binary_search(&(j as u32)).map(|p| ws[p]).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, ws) = self.row(i);
            for (&c, &w) in cols.iter().zip(ws) {
                out[i * self.n + c as usize] = w;
            }
        }
        out
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n).map(|i| (self.row(i).1.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && self.max_row_sum_error() <= tol
    }

    /// Transposed matrix; each output row lists its sources in increasing order.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0u32; self.n + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut weights = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let (cols, ws) = self.row(i);
            for (&c, &w) in cols.iter().zip(ws) {
                let slot = cursor[c as usize] as usize;
                indices[slot] = i as u32;
                weights[slot] = w;
                cursor[c as usize] += 1;
            }
        }
        CsrMatrix { n: self.n, offsets, indices, weights }
    }

    /// `out = M v`. Each output entry is summed in increasing column order, so
    /// the result does not depend on the thread count.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let dot = |i: usize| {
            let (cols, ws) = self.row(i);
            cols.iter().zip(ws).map(|(&c, &w)| w * v[c as usize]).sum::<f64>()
        };
        if self.n >= PAR_MIN_ROWS {
            (0..self.n).into_par_iter().map(dot).collect()
        } else {
            (0..self.n).map(dot).collect()
        }
    }
}
