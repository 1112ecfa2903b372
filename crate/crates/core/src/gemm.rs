//! Blocked symmetric Gram product `G = B Bᵀ` for row-major square `B`.
//!
//! Only tiles on or above the block diagonal are computed; the lower
//! triangle is mirrored. Each entry accumulates its k-chunks in a fixed
//! order, so the output is bitwise identical for any thread count.

use rayon::prelude::*;

const ROW_BLOCK: usize = 48;
const K_BLOCK: usize = 256;

pub(crate) fn gram_symmetric(b: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(b.len(), n * n);
    let blocks: Vec<(usize, usize)> = (0..n).step_by(ROW_BLOCK).map(|s| (s, (s + ROW_BLOCK).min(n))).collect();

    // Upper-trapezoid strip for each row block: rows [i0, i1), columns [i0, n).
    let strips: Vec<Vec<f64>> = blocks
        .par_iter()
        .map(|&(i0, i1)| {
            let width = n - i0;
            let mut strip = vec![0.0f64; (i1 - i0) * width];
            for k0 in (0..n).step_by(K_BLOCK) {
                let k1 = (k0 + K_BLOCK).min(n);
                for &(j0, j1) in blocks.iter().filter(|(j0, _)| *j0 >= i0) {
                    for i in i0..i1 {
                        let bi = &b[i * n + k0..i * n + k1];
                        let out = &mut strip[(i - i0) * width..(i - i0 + 1) * width];
                        for j in j0..j1 {
                            let bj = &b[j * n + k0..j * n + k1];
                            out[j - i0] += dot(bi, bj);
                        }
                    }
                }
            }
            strip
        })
        .collect();

    let mut g = vec![0.0f64; n * n];
    for (&(i0, i1), strip) in blocks.iter().zip(&strips) {
        let width = n - i0;
        for i in i0..i1 {
            let row = &strip[(i - i0) * width..(i - i0 + 1) * width];
            for j in i..n {
                let v = row[j - i0];
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
    }
    g
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
