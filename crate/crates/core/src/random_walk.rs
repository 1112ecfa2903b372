//! Boundary-gated random walk over the 8-connected feature grid.

use crate::cam::ActivationMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sparse::CsrMatrix;

pub const DEFAULT_RW_STEPS: usize = 16;
pub const DEFAULT_BETA: f64 = 8.0;

/// Per-pixel boundary probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    grid: Grid,
    data: Vec<f64>,
}

impl BoundaryMap {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidShape {
                shape: vec![grid.height, grid.width],
                reason: format!("boundary buffer holds {} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("boundary map"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("boundary values must lie in [0, 1]".into()));
        }
        Ok(BoundaryMap { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        BoundaryMap { grid, data: vec![0.0; grid.len()] }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Row-stochastic transition restricted to each pixel and its 8 neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    grid: Grid,
    matrix: CsrMatrix,
}

impl TransitionMatrix {
    pub fn identity(grid: Grid) -> Self {
        TransitionMatrix { grid, matrix: CsrMatrix::identity(grid.len()) }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

/// Affinity between 8-neighbors `p, q` is `(1 - max(b(p), b(q)))^beta`;
/// every pixel keeps a self-loop of weight 1 before row normalization.
pub fn build_transition(boundary: &BoundaryMap, beta: f64) -> Result<TransitionMatrix> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let grid = boundary.grid;
    let b = &boundary.data;
    let (h, w) = (grid.height as isize, grid.width as isize);
    let rows = (0..grid.len())
        .map(|p| {
            let (r, c) = grid.coords(p);
            let mut row = Vec::with_capacity(9);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h || cc >= w {
                        continue;
                    }
                    let q = grid.index(rr as usize, cc as usize);
                    let weight = if q == p { 1.0 } else { (1.0 - b[p].max(b[q])).powf(beta) };
                    if weight > 0.0 {
                        row.push((q as u32, weight));
                    }
                }
            }
            let total: f64 = row.iter().map(|&(_, wt)| wt).sum();
            row.into_iter().map(|(q, wt)| (q, wt / total)).collect()
        })
        .collect();
    Ok(TransitionMatrix { grid, matrix: CsrMatrix::from_sorted_rows(rows) })
}

/// Boundary-suppressed activation, `m * (1 - b)`, before any walk step.
pub fn suppress_boundary(map: &ActivationMap, boundary: &BoundaryMap) -> Result<Vec<f64>> {
    if map.grid != boundary.grid {
        return Err(Error::GridMismatch { left: map.grid.dims(), right: boundary.grid.dims() });
    }
    Ok(map.data.iter().zip(&boundary.data).map(|(m, b)| m * (1.0 - b)).collect())
}

/// `vec(out) = T^steps vec(m * (1 - b))`, then divided by its peak.
pub fn rw_refine(
    map: &ActivationMap,
    boundary: &BoundaryMap,
    transition: &TransitionMatrix,
    steps: usize,
) -> Result<ActivationMap> {
    if steps == 0 {
        return Err(Error::InvalidParameter("random-walk steps must be at least 1".into()));
    }
    if map.grid != transition.grid {
        return Err(Error::GridMismatch { left: map.grid.dims(), right: transition.grid.dims() });
    }
    let mut v = suppress_boundary(map, boundary)?;
    for _ in 0..steps {
        v = transition.matrix.apply(&v);
    }
    let mut out = ActivationMap { class_id: map.class_id, grid: map.grid, data: v };
    out.normalize_max();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn clear_boundary_gives_uniform_neighbourhoods() {
        let grid = Grid::new(3, 4);
        let t = build_transition(&BoundaryMap::zeros(grid), 1.0).unwrap();
        for p in 0..grid.len() {
            let (cols, ws) = t.matrix().row(p);
            let expected = 1.0 / cols.len() as f64;
            assert!(ws.iter().all(|&w| (w - expected).abs() < 1e-15));
        }
        assert_eq!(t.matrix().row_len(0), 4);
        assert_eq!(t.matrix().row_len(grid.index(1, 1)), 9);
    }

    #[test]
    fn full_boundary_gives_identity() {
        let grid = Grid::new(3, 3);
        let b = BoundaryMap::new(grid, vec![1.0; 9]).unwrap();
        assert_eq!(build_transition(&b, 2.5).unwrap(), TransitionMatrix::identity(grid));
    }

    #[test]
    fn single_boundary_pixel_hand_matrix() {
        let grid = Grid::new(3, 3);
        let mut b = vec![0.0; 9];
        b[4] = 1.0;
        let t = build_transition(&BoundaryMap::new(grid, b).unwrap(), 1.0).unwrap();
        let (c, e) = (1.0 / 3.0, 1.0 / 5.0);
        #[rustfmt::skip]
        let expected = [
            c, c, 0., c, 0., 0., 0., 0., 0.,
            e, e, e, e, 0., e, 0., 0., 0.,
            0., c, c, 0., 0., c, 0., 0., 0.,
            e, e, 0., e, 0., 0., e, e, 0.,
            0., 0., 0., 0., 1., 0., 0., 0., 0.,
            0., e, e, 0., 0., e, 0., e, e,
            0., 0., 0., c, 0., 0., c, c, 0.,
            0., 0., 0., e, 0., e, e, e, e,
            0., 0., 0., 0., 0., c, 0., c, c,
        ];
        for (got, want) in t.matrix().to_dense().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_stay_stochastic_for_any_boundary() {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..20 {
            let grid = Grid::new(rng.random_range(1..7), rng.random_range(1..7));
            let b = BoundaryMap::new(grid, (0..grid.len()).map(|_| rng.random()).collect()).unwrap();
            let t = build_transition(&b, rng.random_range(0.1..10.0)).unwrap();
            assert!(t.matrix().is_row_stochastic(1e-12));
        }
    }

    #[test]
    fn identity_walk_without_boundary_is_renormalized_input() {
        let grid = Grid::new(2, 3);
        let m = ActivationMap::new(0, grid, vec![0.1, 0.5, 0.2, 0.0, 0.25, 0.4]).unwrap();
        let out = rw_refine(&m, &BoundaryMap::zeros(grid), &TransitionMatrix::identity(grid), 4).unwrap();
        for (o, x) in out.data.iter().zip(&m.data) {
            assert!((o - x / 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn suppressed_everywhere_is_zero() {
        let grid = Grid::new(2, 2);
        let m = ActivationMap::new(1, grid, vec![0.3, 1.0, 0.7, 0.2]).unwrap();
        let b = BoundaryMap::new(grid, vec![1.0; 4]).unwrap();
        assert_eq!(suppress_boundary(&m, &b).unwrap(), vec![0.0; 4]);
        let out = rw_refine(&m, &b, &build_transition(&b, 1.0).unwrap(), 3).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn steps_compose_as_operator_power() {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(4);
        let grid = Grid::new(4, 4);
        let b = BoundaryMap::new(grid, (0..16).map(|_| rng.random::<f64>() * 0.5).collect()).unwrap();
        let t = build_transition(&b, 2.0).unwrap();
        let m = ActivationMap::new(0, grid, (0..16).map(|_| rng.random()).collect()).unwrap();
        let whole = rw_refine(&m, &b, &t, 5).unwrap();
        // apply 2 then 3 steps to the raw suppressed vector
        let mut v = suppress_boundary(&m, &b).unwrap();
        for _ in 0..2 {
            v = t.matrix().apply(&v);
        }
        let mut v3 = v.clone();
        for _ in 0..3 {
            v3 = t.matrix().apply(&v3);
        }
        let peak = v3.iter().cloned().fold(0.0, f64::max);
        for (a, b) in whole.data.iter().zip(&v3) {
            assert!((a - b / peak).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_errors() {
        let grid = Grid::new(2, 2);
        assert!(build_transition(&BoundaryMap::zeros(grid), 0.0).is_err());
        assert!(BoundaryMap::new(grid, vec![0.0, 1.5, 0.0, 0.0]).is_err());
        let m = ActivationMap::zeros(0, Grid::new(1, 4));
        let t = TransitionMatrix::identity(grid);
        assert!(matches!(rw_refine(&m, &BoundaryMap::zeros(grid), &t, 1), Err(Error::GridMismatch { .. })));
        let m = ActivationMap::zeros(0, grid);
        assert!(rw_refine(&m, &BoundaryMap::zeros(grid), &t, 0).is_err());
    }
}
