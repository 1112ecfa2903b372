//! Activation diffusion over refined attention.
//!
//! Each step moves every pixel's activation to the pixels it attends to, in
//! proportion to its refined attention weights:
//! `m'(i) = sum_j Ã[j][i] * m(j)`. Since rows of `Ã` sum to 1 the total
//! activation is conserved.

use crate::cam::{
    aggregate_attention, compute_cam, ActivationMap, AttentionMatrix, AttentionStack, ClassifierWeights, FeatureMap,
};
use crate::coneighbor::{refine, similarity, RefinedAttention, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_STEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffusionConfig {
    pub steps: usize,
    /// Divide the result by its peak so values land in `[0, 1]`.
    pub renormalize_output: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig { steps: DEFAULT_STEPS, renormalize_output: true }
    }
}

impl DiffusionConfig {
    pub fn new(steps: usize) -> Result<Self> {
        let cfg = DiffusionConfig { steps, ..Default::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn raw(steps: usize) -> Result<Self> {
        let cfg = DiffusionConfig { steps, renormalize_output: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("diffusion steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One transpose-apply step.
pub fn diffuse_step(att: &RefinedAttention, v: &[f64]) -> Vec<f64> {
    att.transposed().apply(v)
}

pub fn diffuse(m0: &ActivationMap, att: &RefinedAttention, cfg: DiffusionConfig) -> Result<ActivationMap> {
    cfg.validate()?;
    if m0.grid != att.grid() {
        return Err(Error::GridMismatch { left: m0.grid.dims(), right: att.grid().dims() });
    }
    if m0.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("activation map"));
    }
    if m0.data.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("activation map must be nonnegative".into()));
    }
    let mut v = m0.data.clone();
    for _ in 0..cfg.steps {
        v = diffuse_step(att, &v);
    }
    let mut out = ActivationMap { class_id: m0.class_id, grid: m0.grid, data: v };
    if cfg.renormalize_output {
        out.normalize_max();
    }
    Ok(out)
}

/// Attention aggregated over layers and heads, with its co-neighbor
/// similarity. Both are independent of `k`, `T` and the class, so one
/// instance serves every refinement of the same image.
#[derive(Debug, Clone)]
pub struct PreparedAttention {
    pub attention: AttentionMatrix,
    pub similarity: SimilarityMatrix,
}

impl PreparedAttention {
    pub fn new(stack: &AttentionStack, grid: Grid) -> Result<Self> {
        let attention = aggregate_attention(stack, grid)?;
        let similarity = similarity(&attention)?;
        Ok(PreparedAttention { attention, similarity })
    }

    pub fn refine(&self, k: usize) -> Result<RefinedAttention> {
        refine(&self.attention, &self.similarity, k)
    }
}

/// Vanilla CAMs for every labeled class.
pub fn class_maps(features: &FeatureMap, weights: &ClassifierWeights, labels: &[usize]) -> Result<Vec<ActivationMap>> {
    if labels.is_empty() {
        return Err(Error::InvalidParameter("no labeled classes".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    labels
        .iter()
        .map(|&k| {
            if !seen.insert(k) {
                return Err(Error::DuplicateClass(k));
            }
            compute_cam(features, weights, k)
        })
        .collect()
}

/// Full AD-CAM: vanilla CAM per labeled class, diffused over the co-neighbor
/// refined attention. The attention is aggregated, compared and refined
/// once for all classes.
pub fn ad_cam(
    features: &FeatureMap,
    weights: &ClassifierWeights,
    stack: &AttentionStack,
    labels: &[usize],
    k: usize,
    cfg: DiffusionConfig,
) -> Result<Vec<ActivationMap>> {
    cfg.validate()?;
    let cams = class_maps(features, weights, labels)?;
    let refined = PreparedAttention::new(stack, features.grid())?.refine(k)?;
    cams.iter().map(|m| diffuse(m, &refined, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coneighbor::refine_call_count;
    use crate::sparse::CsrMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_refined(grid: Grid, k: usize, rng: &mut impl Rng) -> (AttentionMatrix, RefinedAttention) {
        let n = grid.len();
        let data: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>().powi(3)).collect();
        let a = AttentionMatrix::from_rows(grid, data).unwrap();
        let s = similarity(&a).unwrap();
        let r = refine(&a, &s, k.min(n)).unwrap();
        (a, r)
    }

    fn random_map(grid: Grid, rng: &mut impl Rng) -> ActivationMap {
        ActivationMap::new(0, grid, (0..grid.len()).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identity_operator_is_exact() {
        let grid = Grid::new(3, 4);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(1);
        let m = random_map(grid, &mut rng);
        let out = diffuse(&m, &RefinedAttention::identity(grid), DiffusionConfig::raw(5).unwrap()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn uniform_operator_yields_mean() {
        let grid = Grid::new(4, 4);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(2);
        let m = random_map(grid, &mut rng);
        let mean = m.data.iter().sum::<f64>() / 16.0;
        let att = RefinedAttention::unfiltered(&AttentionMatrix::uniform(grid));
        let out = diffuse(&m, &att, DiffusionConfig::raw(1).unwrap()).unwrap();
        assert!(out.data.iter().all(|v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn two_steps_match_dense_products() {
        let grid = Grid::new(4, 4);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        let (_, r) = random_refined(grid, 4, &mut rng);
        let m = random_map(grid, &mut rng);
        let dense = r.matrix().to_dense();
        let mut v = m.data.clone();
        for _ in 0..2 {
            let mut next = vec![0.0; 16];
            for i in 0..16 {
                for j in 0..16 {
                    next[i] += dense[j * 16 + i] * v[j];
                }
            }
            v = next;
        }
        let out = diffuse(&m, &r, DiffusionConfig::raw(2).unwrap()).unwrap();
        for (a, b) in out.data.iter().zip(&v) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn renormalized_output_peaks_at_one() {
        let grid = Grid::new(3, 3);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(4);
        let (_, r) = random_refined(grid, 3, &mut rng);
        let out = diffuse(&random_map(grid, &mut rng), &r, DiffusionConfig::default()).unwrap();
        assert!((out.max() - 1.0).abs() < 1e-12);
        let zero = diffuse(&ActivationMap::zeros(0, grid), &r, DiffusionConfig::default()).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_grid_mismatch_and_zero_steps() {
        let att = RefinedAttention::identity(Grid::new(2, 2));
        let m = ActivationMap::zeros(0, Grid::new(1, 4));
        assert!(matches!(diffuse(&m, &att, DiffusionConfig::default()), Err(Error::GridMismatch { .. })));
        assert!(DiffusionConfig::new(0).is_err());
    }

    fn identity_stack(n: usize) -> AttentionStack {
        let mut m = vec![0.0f32; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        AttentionStack::single(n, m).unwrap()
    }

    #[test]
    fn identity_stack_reproduces_vanilla_cam() {
        let grid = Grid::new(2, 3);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(5);
        let f = FeatureMap::new(2, grid, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = ClassifierWeights::new(1, 2, vec![0.7, -0.2]).unwrap();
        let maps = ad_cam(&f, &w, &identity_stack(6), &[0], 3, DiffusionConfig::default()).unwrap();
        assert_eq!(maps, vec![compute_cam(&f, &w, 0).unwrap()]);
    }

    #[test]
    fn refinement_shared_across_classes() {
        let grid = Grid::new(2, 2);
        let f = FeatureMap::new(2, grid, vec![1.0, 0.5, 0.2, 0.1, 0.3, 0.9, 0.4, 0.8]).unwrap();
        let w = ClassifierWeights::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let before = refine_call_count();
        let maps = ad_cam(&f, &w, &identity_stack(4), &[0, 1], 2, DiffusionConfig::default()).unwrap();
        assert_eq!(refine_call_count() - before, 1);
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[1].class_id, 1);
    }

    #[test]
    fn ad_cam_label_errors() {
        let grid = Grid::new(1, 2);
        let f = FeatureMap::new(1, grid, vec![1.0, 2.0]).unwrap();
        let w = ClassifierWeights::new(2, 1, vec![1.0, 1.0]).unwrap();
        let cfg = DiffusionConfig::default();
        assert!(ad_cam(&f, &w, &identity_stack(2), &[], 1, cfg).is_err());
        assert!(matches!(ad_cam(&f, &w, &identity_stack(2), &[2], 1, cfg), Err(Error::ClassOutOfRange { .. })));
        assert!(matches!(ad_cam(&f, &w, &identity_stack(2), &[1, 1], 1, cfg), Err(Error::DuplicateClass(1))));
    }

    #[test]
    fn scatter_and_pull_agree_bitwise() {
        let grid = Grid::new(5, 5);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(6);
        let (_, r) = random_refined(grid, 6, &mut rng);
        let v = random_map(grid, &mut rng).data;
        let mut scattered = vec![0.0; 25];
        let m: &CsrMatrix = r.matrix();
        for (i, &vi) in v.iter().enumerate() {
            let (cols, ws) = m.row(i);
            for (&c, &w) in cols.iter().zip(ws) {
                scattered[c as usize] += w * vi;
            }
        }
        assert_eq!(diffuse_step(&r, &v), scattered);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mass_is_conserved(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, k in 1usize..20, steps in 1usize..9) {
            let grid = Grid::new(h, w);
            let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
            let (_, r) = random_refined(grid, k, &mut rng);
            let mut v = random_map(grid, &mut rng).data;
            let total: f64 = v.iter().sum();
            for _ in 0..steps {
                v = diffuse_step(&r, &v);
                prop_assert!(v.iter().all(|&x| x >= 0.0));
                prop_assert!((v.iter().sum::<f64>() - total).abs() <= 1e-5 * grid.len() as f64);
            }
        }

        #[test]
        fn diffusion_is_linear(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..3.0, steps in 1usize..5) {
            let grid = Grid::new(4, 3);
            let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
            let (_, r) = random_refined(grid, 5, &mut rng);
            let m1 = random_map(grid, &mut rng);
            let m2 = random_map(grid, &mut rng);
            let mix = ActivationMap::new(0, grid, m1.data.iter().zip(&m2.data).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let cfg = DiffusionConfig::raw(steps).unwrap();
            let d1 = diffuse(&m1, &r, cfg).unwrap();
            let d2 = diffuse(&m2, &r, cfg).unwrap();
            let dm = diffuse(&mix, &r, cfg).unwrap();
            for i in 0..grid.len() {
                prop_assert!((dm.data[i] - (a * d1.data[i] + b * d2.data[i])).abs() < 1e-5);
            }
        }

        #[test]
        fn steps_compose(seed in any::<u64>(), p in 1usize..4, q in 1usize..4) {
            let grid = Grid::new(3, 5);
            let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
            let (_, r) = random_refined(grid, 4, &mut rng);
            let m = random_map(grid, &mut rng);
            let whole = diffuse(&m, &r, DiffusionConfig::raw(p + q).unwrap()).unwrap();
            let first = diffuse(&m, &r, DiffusionConfig::raw(p).unwrap()).unwrap();
            let split = diffuse(&first, &r, DiffusionConfig::raw(q).unwrap()).unwrap();
            for (x, y) in whole.data.iter().zip(&split.data) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
