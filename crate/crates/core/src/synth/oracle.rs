//! Dense reference implementations transcribed directly from the defining
//! formulas. They are O(n³) and limited to small grids.

use crate::cam::AttentionMatrix;
use crate::error::{Error, Result};

pub const ORACLE_LIMIT: usize = 64;

fn check(n: usize) -> Result<()> {
    if n > ORACLE_LIMIT {
        return Err(Error::OracleSizeExceeded { n, limit: ORACLE_LIMIT });
    }
    Ok(())
}

/// `S[i][j] = sum_k sqrt(A[i][k] * A[j][k])`, dense row-major.
pub fn dense_oracle_similarity(a: &AttentionMatrix) -> Result<Vec<f64>> {
    let n = a.n();
    check(n)?;
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += (a.get(i, k) * a.get(j, k)).sqrt();
            }
            s[i * n + j] = acc;
        }
    }
    Ok(s)
}

/// Fully sorts each similarity row (ties toward the smaller column), keeps
/// attention on the first `k` columns, and rescales to unit row sum. A row
/// left without mass becomes a self-loop.
pub fn dense_oracle_refine(a: &AttentionMatrix, similarity: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = a.n();
    check(n)?;
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let srow = &similarity[i * n..(i + 1) * n];
        let mut cols: Vec<usize> = (0..n).collect();
        cols.sort_by(|&x, &y| srow[y].partial_cmp(&srow[x]).unwrap().then(x.cmp(&y)));
        let mut mass = 0.0;
        for &j in &cols[..k] {
            out[i * n + j] = a.get(i, j);
            mass += a.get(i, j);
        }
        if mass < 1e-12 {
            for j in 0..n {
                out[i * n + j] = 0.0;
            }
            out[i * n + i] = 1.0;
        } else {
            for j in 0..n {
                out[i * n + j] /= mass;
            }
        }
    }
    Ok(out)
}

fn matmul(x: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += x[i * n + k] * y[k * n + j];
            }
            z[i * n + j] = acc;
        }
    }
    z
}

/// `operator^power · v` with the power formed by repeated dense products.
pub fn dense_oracle_matrix_power_apply(operator: &[f64], n: usize, power: usize, v: &[f64]) -> Result<Vec<f64>> {
    check(n)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = 1.0;
    }
    for _ in 0..power {
        p = matmul(operator, &p, n);
    }
    Ok((0..n).map(|i| (0..n).map(|j| p[i * n + j] * v[j]).sum()).collect())
}

/// `(Ãᵀ)^steps · m0`: each step pixel `i` collects `Ã[j][i] · m(j)`.
pub fn dense_oracle_diffuse(refined: &[f64], n: usize, m0: &[f64], steps: usize) -> Result<Vec<f64>> {
    check(n)?;
    let mut transposed = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            transposed[i * n + j] = refined[j * n + i];
        }
    }
    dense_oracle_matrix_power_apply(&transposed, n, steps, m0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn identity_and_uniform() {
        let id = dense_oracle_similarity(&AttentionMatrix::identity(Grid::new(2, 3))).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(id[i * 6 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let u = dense_oracle_similarity(&AttentionMatrix::uniform(Grid::new(3, 3))).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn size_limit() {
        let a = AttentionMatrix::identity(Grid::new(9, 9));
        assert!(matches!(dense_oracle_similarity(&a), Err(Error::OracleSizeExceeded { n: 81, .. })));
    }

    #[test]
    fn power_zero_is_identity() {
        let op = vec![0.5, 0.5, 0.2, 0.8];
        assert_eq!(dense_oracle_matrix_power_apply(&op, 2, 0, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(dense_oracle_matrix_power_apply(&op, 2, 1, &[1.0, 0.0]).unwrap(), vec![0.5, 0.2]);
    }
}
