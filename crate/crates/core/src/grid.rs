use serde::{Deserialize, Serialize};

/// Spatial layout of a token or pixel grid. Token `i` sits at
/// row `i / width`, column `i % width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const fn new(height: usize, width: usize) -> Self {
        Grid { height, width }
    }

    /// Number of cells, `height * width`.
    pub const fn len(&self) -> usize {
        self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub const fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub const fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl From<(usize, usize)> for Grid {
    fn from((height, width): (usize, usize)) -> Self {
        Grid { height, width }
    }
}
