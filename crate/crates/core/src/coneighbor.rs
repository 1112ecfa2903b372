//! Co-neighbor similarity between attention rows and the top-k refined
//! attention operator built from it.
//!
//! Two tokens are co-neighbors to the degree their attention distributions
//! overlap: `S_ij = sum_k sqrt(A_ik * A_jk)`, the Bhattacharyya coefficient
//! of rows `i` and `j`. With row-stochastic `A` every entry lies in `[0, 1]`
//! and equals 1 exactly when the two rows coincide. The refined operator
//! keeps, for each row, only the attention toward its `k` most similar
//! tokens and renormalizes what survives.

use std::cell::Cell;
use std::cmp::Ordering;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::cam::AttentionMatrix;
use crate::error::{Error, Result};
use crate::gemm::gram_symmetric;
use crate::grid::Grid;
use crate::sparse::CsrMatrix;

/// Rows whose masked mass falls below this become pure self-loops.
pub const DEGENERATE_ROW_MASS: f64 = 1e-12;

thread_local! {
    static REFINE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`refine`] invocations made from the current thread.
pub fn refine_call_count() -> u64 {
    REFINE_CALLS.with(Cell::get)
}

/// Dense symmetric co-neighbor similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Wraps an externally computed matrix. Entries must be finite.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!("{} values for a {n}x{n} similarity", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("similarity matrix"));
        }
        Ok(SimilarityMatrix { n, data })
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = self.data[perm[i] * n + perm[j]];
            }
        }
        SimilarityMatrix { n, data }
    }
}

/// `S = sqrt(A) sqrt(A)ᵀ`, clamped to `[0, 1]`.
pub fn similarity(a: &AttentionMatrix) -> Result<SimilarityMatrix> {
    if a.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("attention matrix"));
    }
    let n = a.n();
    let roots: Vec<f64> = a.data().iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut data = gram_symmetric(&roots, n);
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(SimilarityMatrix { n, data })
}

/// Sparse row-stochastic attention restricted to each row's top-k
/// co-neighbors.
#[derive(Debug, Clone)]
pub struct RefinedAttention {
    grid: Grid,
    matrix: CsrMatrix,
    transposed: OnceLock<CsrMatrix>,
}

impl PartialEq for RefinedAttention {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.matrix == other.matrix
    }
}

impl RefinedAttention {
    /// Wraps a CSR operator, renormalizing rows so they sum to 1.
    pub fn from_csr(grid: Grid, matrix: CsrMatrix) -> Result<Self> {
        if matrix.n() != grid.len() {
            return Err(Error::ShapeMismatch(format!("operator over {} tokens, grid {:?}", matrix.n(), grid.dims())));
        }
        if matrix.weights().iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidAttention("negative refined weight".into()));
        }
        let rows = (0..matrix.n())
            .map(|i| {
                let (cols, ws) = matrix.row(i);
                let sum: f64 = ws.iter().sum();
                if sum < DEGENERATE_ROW_MASS {
                    vec![(i as u32, 1.0)]
                } else {
                    cols.iter().zip(ws).map(|(&c, &w)| (c, w / sum)).collect()
                }
            })
            .collect();
        Ok(Self::new(grid, CsrMatrix::from_sorted_rows(rows)))
    }

    /// The attention itself with no co-neighbor filtering.
    pub fn unfiltered(a: &AttentionMatrix) -> Self {
        Self::new(a.grid(), CsrMatrix::from_dense(a.n(), a.data()))
    }

    pub fn identity(grid: Grid) -> Self {
        Self::new(grid, CsrMatrix::identity(grid.len()))
    }

    fn new(grid: Grid, matrix: CsrMatrix) -> Self {
        RefinedAttention { grid, matrix, transposed: OnceLock::new() }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub(crate) fn transposed(&self) -> &CsrMatrix {
        self.transposed.get_or_init(|| self.matrix.transpose())
    }

    pub fn max_support(&self) -> usize {
        (0..self.matrix.n()).map(|i| self.matrix.row_len(i)).max().unwrap_or(0)
    }
}

/// Ranking used by the top-k selection: larger similarity first, ties go to
/// the smaller column index.
fn rank_order(s: &[f64]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&x, &y| s[y as usize].total_cmp(&s[x as usize]).then(x.cmp(&y))
}

/// Masks each row of `a` to its `k` most similar columns under `s` and
/// renormalizes the surviving weights. Zero weights are not stored.
pub fn refine(a: &AttentionMatrix, s: &SimilarityMatrix, k: usize) -> Result<RefinedAttention> {
    REFINE_CALLS.with(|c| c.set(c.get() + 1));
    let n = a.n();
    if s.n() != n {
        return Err(Error::ShapeMismatch(format!("attention n = {n}, similarity n = {}", s.n())));
    }
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<u32> = (0..n as u32).collect();
            if k < n {
                order.select_nth_unstable_by(k - 1, rank_order(s.row(i)));
                order.truncate(k);
                order.sort_unstable();
            }
            let arow = a.row(i);
            let kept: Vec<(u32, f64)> =
                order.into_iter().map(|j| (j, arow[j as usize])).filter(|&(_, w)| w > 0.0).collect();
            let mass: f64 = kept.iter().map(|&(_, w)| w).sum();
            if mass < DEGENERATE_ROW_MASS {
                vec![(i as u32, 1.0)]
            } else {
                kept.into_iter().map(|(j, w)| (j, w / mass)).collect()
            }
        })
        .collect();
    Ok(RefinedAttention::new(a.grid(), CsrMatrix::from_sorted_rows(rows)))
}
