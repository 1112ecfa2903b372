//! Vanilla class activation maps and attention aggregation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Below this peak the normalized CAM is undefined and the zero map is returned.
pub const CAM_EPSILON: f64 = 1e-12;

/// Row-sum tolerance accepted for raw per-head attention.
pub const STACK_ROW_TOLERANCE: f64 = 1e-4;

/// Backbone features before global pooling, `C x h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    grid: Grid,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, grid: Grid, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || grid.is_empty() {
            return Err(Error::InvalidShape {
                shape: vec![channels, grid.height, grid.width],
                reason: "feature dimensions must be positive".into(),
            });
        }
        if data.len() != channels * grid.len() {
            return Err(Error::InvalidShape {
                shape: vec![channels, grid.height, grid.width],
                reason: format!("buffer holds {} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("feature map"));
        }
        Ok(FeatureMap { channels, grid, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Final-layer classifier weights, one row of `C` values per foreground class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    classes: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ClassifierWeights {
    pub fn new(classes: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if classes == 0 || channels == 0 || data.len() != classes * channels {
            return Err(Error::InvalidShape {
                shape: vec![classes, channels],
                reason: format!("invalid classifier weights with {} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("classifier weights"));
        }
        Ok(ClassifierWeights { classes, channels, data })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.data[class * self.channels..(class + 1) * self.channels]
    }

    /// Same weights with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        ClassifierWeights { data: self.data.iter().map(|w| w * factor).collect(), ..self.clone() }
    }
}

/// Per-class activation grid.
///
/// Maps produced by [`compute_cam`] or by normalized diffusion hold values in
/// `[0, 1]` with peak 1 (or are identically zero); raw diffusion output is
/// only guaranteed nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub class_id: usize,
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl ActivationMap {
    pub fn new(class_id: usize, grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidShape {
                shape: vec![grid.height, grid.width],
                reason: format!("buffer holds {} values", data.len()),
            });
        }
        Ok(ActivationMap { class_id, grid, data })
    }

    pub fn zeros(class_id: usize, grid: Grid) -> Self {
        ActivationMap { class_id, grid, data: vec![0.0; grid.len()] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.grid.index(row, col)]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Divides by the peak value; a map whose peak is below [`CAM_EPSILON`]
    /// becomes the zero map.
    pub fn normalize_max(&mut self) {
        let peak = self.max();
        if peak < CAM_EPSILON {
            self.data.iter_mut().for_each(|v| *v = 0.0);
        } else {
            self.data.iter_mut().for_each(|v| *v /= peak);
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Raw attention for one image, `L x H x n x n`, each head row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    layers: usize,
    heads: usize,
    tokens: usize,
    data: Vec<f32>,
}

impl AttentionStack {
    pub fn new(layers: usize, heads: usize, tokens: usize, data: Vec<f32>) -> Result<Self> {
        let shape = vec![layers, heads, tokens, tokens];
        if layers == 0 || heads == 0 || tokens == 0 {
            return Err(Error::InvalidShape { shape, reason: "attention dimensions must be positive".into() });
        }
        if data.len() != layers * heads * tokens * tokens {
            return Err(Error::InvalidShape { shape, reason: format!("buffer holds {} values", data.len()) });
        }
        for (r, row) in data.chunks_exact(tokens).enumerate() {
            let mut sum = 0.0f64;
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::NonFiniteInput("attention stack"));
                }
                if v < 0.0 {
                    return Err(Error::InvalidAttention(format!("negative entry in slice row {r}")));
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > STACK_ROW_TOLERANCE {
                let per_slice = tokens;
                return Err(Error::InvalidAttention(format!(
                    "layer {} head {} row {} sums to {sum}",
                    r / (heads * per_slice),
                    (r / per_slice) % heads,
                    r % per_slice
                )));
            }
        }
        Ok(AttentionStack { layers, heads, tokens, data })
    }

    /// A single-layer, single-head stack holding `matrix` (row-major `n x n`).
    pub fn single(tokens: usize, matrix: Vec<f32>) -> Result<Self> {
        Self::new(1, 1, tokens, matrix)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn slice(&self, layer: usize, head: usize) -> &[f32] {
        let sz = self.tokens * self.tokens;
        let start = (layer * self.heads + head) * sz;
        &self.data[start..start + sz]
    }
}

/// Dense row-stochastic `n x n` attention over a token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    grid: Grid,
    data: Vec<f64>,
}

impl AttentionMatrix {
    /// Builds a matrix from raw rows, renormalizing each one to sum to 1.
    pub fn from_rows(grid: Grid, mut data: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if n == 0 || data.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form a {n}x{n} matrix for grid {:?}",
                data.len(),
                grid.dims()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("attention matrix"));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidAttention("negative attention entry".into()));
        }
        for (i, row) in data.chunks_exact_mut(n).enumerate() {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::InvalidAttention(format!("row {i} has no mass")));
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(AttentionMatrix { grid, data })
    }

    pub fn identity(grid: Grid) -> Self {
        let n = grid.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        AttentionMatrix { grid, data }
    }

    pub fn uniform(grid: Grid) -> Self {
        let n = grid.len();
        AttentionMatrix { grid, data: vec![1.0 / n as f64; n * n] }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n() + j]
    }

    /// Applies the same relabelling to rows and columns: entry `(i, j)` of the
    /// result is entry `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = self.data[perm[i] * n + perm[j]];
            }
        }
        AttentionMatrix { grid: self.grid, data }
    }
}

/// `CAM_k = ReLU(w_k . f) / max(ReLU(w_k . f))`, or the zero map when the
/// peak is below [`CAM_EPSILON`].
pub fn compute_cam(features: &FeatureMap, weights: &ClassifierWeights, class: usize) -> Result<ActivationMap> {
    if class >= weights.classes() {
        return Err(Error::ClassOutOfRange { class, classes: weights.classes() });
    }
    if weights.channels() != features.channels() {
        return Err(Error::ChannelMismatch { features: features.channels(), weights: weights.channels() });
    }
    let grid = features.grid();
    let mut logits = vec![0.0f64; grid.len()];
    for (c, &w) in weights.row(class).iter().enumerate() {
        let w = w as f64;
        for (acc, &f) in logits.iter_mut().zip(features.channel(c)) {
            *acc += w * f as f64;
        }
    }
    logits.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut map = ActivationMap { class_id: class, grid, data: logits };
    map.normalize_max();
    Ok(map)
}

/// Averages heads within each layer, then layers, and renormalizes every row
/// to sum to 1.
pub fn aggregate_attention(stack: &AttentionStack, grid: Grid) -> Result<AttentionMatrix> {
    let n = stack.tokens();
    if grid.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} attention tokens do not match a {}x{} grid",
            grid.height, grid.width
        )));
    }
    let heads = stack.heads() as f64;
    let layers = stack.layers() as f64;
    let mut data = vec![0.0f64; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let mut head_mean = vec![0.0f64; n];
        for l in 0..stack.layers() {
            head_mean.iter_mut().for_each(|v| *v = 0.0);
            for h in 0..stack.heads() {
                let row = &stack.slice(l, h)[i * n..(i + 1) * n];
                for (acc, &v) in head_mean.iter_mut().zip(row) {
                    *acc += v as f64;
                }
            }
            for (o, &v) in out.iter_mut().zip(&head_mean) {
                *o += v / heads;
            }
        }
        out.iter_mut().for_each(|v| *v /= layers);
        let sum: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= sum);
    });
    Ok(AttentionMatrix { grid, data })
}

/// Bilinear resize with half-pixel centers: the source coordinate of output
/// pixel `d` is `(d + 0.5) * src / dst - 0.5`, clamped to the source extent.
pub fn upsample_bilinear(map: &ActivationMap, target: Grid) -> Result<ActivationMap> {
    let src = map.grid;
    if target.height == 0 || target.width == 0 || target.height < src.height || target.width < src.width {
        return Err(Error::InvalidTarget(target.dims()));
    }
    if target == src {
        return Ok(map.clone());
    }
    let ys = axis_weights(src.height, target.height);
    let xs = axis_weights(src.width, target.width);
    let mut data = Vec::with_capacity(target.len());
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = map.get(y0, x0) * (1.0 - fx) + map.get(y0, x1) * fx;
            let bottom = map.get(y1, x0) * (1.0 - fx) + map.get(y1, x1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(ActivationMap { class_id: map.class_id, grid: target, data })
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}
