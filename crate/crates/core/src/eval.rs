//! Seed-mask thresholding and segmentation scoring.
//!
//! Mask values: 0 is background, `c + 1` is foreground class `c`, and 255
//! marks pixels excluded from scoring.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::cam::{upsample_bilinear, ActivationMap};
use crate::diffusion::{class_maps, diffuse_step, PreparedAttention};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const BACKGROUND: u8 = 0;
pub const IGNORE: u8 = 255;

/// Per-pixel class labels at image resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedMask {
    grid: Grid,
    num_classes: usize,
    data: Vec<u8>,
}

impl SeedMask {
    /// `num_classes` counts foreground classes only.
    pub fn new(grid: Grid, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        if num_classes >= IGNORE as usize {
            return Err(Error::InvalidParameter(format!("{num_classes} classes do not fit a u8 mask")));
        }
        if data.len() != grid.len() {
            return Err(Error::InvalidShape {
                shape: vec![grid.height, grid.width],
                reason: format!("mask buffer holds {} values", data.len()),
            });
        }
        if let Some(&bad) = data.iter().find(|&&v| v != IGNORE && v as usize > num_classes) {
            return Err(Error::ClassOutOfRange { class: bad as usize, classes: num_classes + 1 });
        }
        Ok(SeedMask { grid, num_classes, data })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Strongest labeled class and its activation at every pixel.
struct ArgmaxField {
    grid: Grid,
    label: Vec<u8>,
    value: Vec<f64>,
}

impl ArgmaxField {
    /// Maps are visited in increasing class order and only a strictly larger
    /// activation displaces the current winner, so ties go to the smaller class.
    fn new(maps: &[&ActivationMap], num_classes: usize) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::InvalidParameter("no activation maps".into()))?;
        let grid = first.grid;
        let mut seen = BTreeSet::new();
        for m in maps {
            if m.grid != grid {
                return Err(Error::DimensionMismatch { left: grid.dims(), right: m.grid.dims() });
            }
            if m.class_id >= num_classes {
                return Err(Error::ClassOutOfRange { class: m.class_id, classes: num_classes });
            }
            if !seen.insert(m.class_id) {
                return Err(Error::DuplicateClass(m.class_id));
            }
        }
        let mut order: Vec<&ActivationMap> = maps.to_vec();
        order.sort_by_key(|m| m.class_id);
        let mut label = vec![order[0].class_id as u8 + 1; grid.len()];
        let mut value = order[0].data.clone();
        for m in &order[1..] {
            for ((l, v), &x) in label.iter_mut().zip(value.iter_mut()).zip(&m.data) {
                if x > *v {
                    *v = x;
                    *l = m.class_id as u8 + 1;
                }
            }
        }
        Ok(ArgmaxField { grid, label, value })
    }

    fn label_at(&self, i: usize, threshold: f64) -> u8 {
        if self.value[i] >= threshold {
            self.label[i]
        } else {
            BACKGROUND
        }
    }
}

/// Labels each pixel with its strongest class when that activation reaches
/// `threshold`, otherwise background.
pub fn seed_mask(maps: &[ActivationMap], threshold: f64, num_classes: usize) -> Result<SeedMask> {
    let refs: Vec<&ActivationMap> = maps.iter().collect();
    let field = ArgmaxField::new(&refs, num_classes)?;
    let data = (0..field.grid.len()).map(|i| field.label_at(i, threshold)).collect();
    SeedMask::new(field.grid, num_classes, data)
}

/// Pixel counts per class, background included at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionStats {
    pub true_positive: Vec<u64>,
    pub false_positive: Vec<u64>,
    pub false_negative: Vec<u64>,
    /// Pixels whose ground truth is not [`IGNORE`].
    pub evaluated: u64,
}

impl ConfusionStats {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionStats {
            true_positive: vec![0; num_classes + 1],
            false_positive: vec![0; num_classes + 1],
            false_negative: vec![0; num_classes + 1],
            evaluated: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.true_positive.len() - 1
    }

    fn record(&mut self, pred: u8, gt: u8) {
        if gt == IGNORE {
            return;
        }
        self.evaluated += 1;
        if pred == gt {
            self.true_positive[gt as usize] += 1;
        } else {
            if pred != IGNORE {
                self.false_positive[pred as usize] += 1;
            }
            self.false_negative[gt as usize] += 1;
        }
    }

    pub fn merge(mut self, other: &ConfusionStats) -> Self {
        self.merge_from(other);
        self
    }

    pub fn merge_from(&mut self, other: &ConfusionStats) {
        assert_eq!(self.true_positive.len(), other.true_positive.len());
        let add = |a: &mut [u64], b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.true_positive, &other.true_positive);
        add(&mut self.false_positive, &other.false_positive);
        add(&mut self.false_negative, &other.false_negative);
        self.evaluated += other.evaluated;
    }
}

pub fn confusion(pred: &SeedMask, gt: &SeedMask) -> Result<ConfusionStats> {
    if pred.grid != gt.grid {
        return Err(Error::DimensionMismatch { left: pred.grid.dims(), right: gt.grid.dims() });
    }
    if pred.num_classes != gt.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} classes, ground truth {}",
            pred.num_classes, gt.num_classes
        )));
    }
    let mut stats = ConfusionStats::zeros(gt.num_classes);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        stats.record(p, g);
    }
    Ok(stats)
}

/// Scores derived from a confusion table.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    /// IoU per class (background first); `None` when the class never
    /// occurs in either prediction or ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

pub fn miou(stats: &ConfusionStats) -> Result<Scores> {
    if stats.evaluated == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let per_class_iou: Vec<Option<f64>> = (0..stats.true_positive.len())
        .map(|c| {
            let tp = stats.true_positive[c];
            let union = tp + stats.false_positive[c] + stats.false_negative[c];
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = defined.iter().sum::<f64>() / defined.len() as f64;
    let total = stats.evaluated as f64;
    let fp: u64 = stats.false_positive[1..].iter().sum();
    let fn_: u64 = stats.false_negative[1..].iter().sum();
    Ok(Scores { per_class_iou, miou, fp_rate: fp as f64 / total, fn_rate: fn_ as f64 / total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub scores: Scores,
}

impl EvalReport {
    pub fn miou(&self) -> f64 {
        self.scores.miou
    }
}

/// Highest-mIoU report; the earliest one wins ties.
pub fn best_report(reports: &[EvalReport]) -> Option<&EvalReport> {
    reports.iter().fold(None, |best: Option<&EvalReport>, r| match best {
        Some(b) if b.miou() >= r.miou() => Some(b),
        _ => Some(r),
    })
}

/// `lo, lo + step, ...` up to and including `hi`, rounded to 10 decimals.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
        return Err(Error::InvalidParameter(format!("invalid threshold range {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..count).map(|i| ((lo + i as f64 * step) * 1e10).round() / 1e10).collect();
    validate_thresholds(&grid)?;
    Ok(grid)
}

/// 0.01, 0.02, ..., 0.99.
pub fn default_thresholds() -> Vec<f64> {
    threshold_grid(0.01, 0.99, 0.01).expect("static grid is valid")
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("threshold list is empty".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidParameter(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

/// Activation maps of one image paired with its ground truth. Maps may be
/// at feature resolution; they are upsampled to the mask size.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub maps: Vec<ActivationMap>,
    pub gt: SeedMask,
}

fn image_confusions(image: &EvalImage, thresholds: &[f64]) -> Result<Vec<ConfusionStats>> {
    let k = image.gt.num_classes;
    let upsampled: Vec<ActivationMap> =
        image.maps.iter().map(|m| upsample_bilinear(m, image.gt.grid)).collect::<Result<_>>()?;
    let refs: Vec<&ActivationMap> = upsampled.iter().collect();
    let field = ArgmaxField::new(&refs, k)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let mut stats = ConfusionStats::zeros(k);
            for (i, &g) in image.gt.data.iter().enumerate() {
                stats.record(field.label_at(i, t), g);
            }
            stats
        })
        .collect())
}

/// One dataset-level report per threshold; confusion counts are summed over
/// images before scoring.
pub fn sweep_threshold(images: &[EvalImage], thresholds: &[f64]) -> Result<Vec<EvalReport>> {
    validate_thresholds(thresholds)?;
    let first = images.first().ok_or_else(|| Error::InvalidParameter("no images to evaluate".into()))?;
    let k = first.gt.num_classes;
    if let Some(img) = images.iter().find(|img| img.gt.num_classes != k) {
        return Err(Error::ShapeMismatch(format!("images disagree on class count: {k} vs {}", img.gt.num_classes)));
    }
    let per_image: Vec<Vec<ConfusionStats>> =
        images.par_iter().map(|img| image_confusions(img, thresholds)).collect::<Result<_>>()?;
    let mut totals = vec![ConfusionStats::zeros(k); thresholds.len()];
    for stats in &per_image {
        for (total, s) in totals.iter_mut().zip(stats) {
            total.merge_from(s);
        }
    }
    thresholds
        .iter()
        .zip(&totals)
        .map(|(&threshold, stats)| Ok(EvalReport { threshold, scores: miou(stats)? }))
        .collect()
}

/// Everything the AD-CAM pipeline needs for one scored image.
#[derive(Debug, Clone)]
pub struct SweepImage {
    pub cams: Vec<ActivationMap>,
    pub attention: PreparedAttention,
    pub gt: SeedMask,
}

impl SweepImage {
    pub fn new(instance: &crate::manifest::Instance) -> Result<Self> {
        let gt = instance
            .gt_mask
            .clone()
            .ok_or_else(|| Error::InvalidParameter(format!("image {} has no ground-truth mask", instance.id)))?;
        Ok(SweepImage {
            cams: class_maps(&instance.features, &instance.weights, &instance.labels)?,
            attention: PreparedAttention::new(&instance.attention, instance.features.grid())?,
            gt,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub k: usize,
    pub steps: usize,
    pub best_threshold: f64,
    pub miou: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

/// Reruns refinement and diffusion for every `(k, T)` pair, reusing each
/// image's aggregated attention and similarity, and keeps the best
/// threshold per pair. Rows are ordered by `k` then `T` as given.
pub fn sensitivity_sweep(
    images: &[SweepImage],
    k_values: &[usize],
    step_values: &[usize],
    thresholds: &[f64],
) -> Result<Vec<SensitivityRow>> {
    if k_values.is_empty() || step_values.is_empty() {
        return Err(Error::InvalidParameter("k and T grids must be nonempty".into()));
    }
    if step_values.contains(&0) {
        return Err(Error::InvalidParameter("diffusion steps must be at least 1".into()));
    }
    let max_steps = *step_values.iter().max().expect("nonempty");
    let mut rows = Vec::with_capacity(k_values.len() * step_values.len());
    for &k in k_values {
        // per image, per T in step_values order: the diffused, normalized maps
        let diffused: Vec<Vec<Vec<ActivationMap>>> = images
            .par_iter()
            .map(|img| {
                let att = img.attention.refine(k)?;
                let mut by_steps: Vec<Option<Vec<ActivationMap>>> = vec![None; max_steps + 1];
                let mut current: Vec<Vec<f64>> = img.cams.iter().map(|m| m.data.clone()).collect();
                for (t, slot) in by_steps.iter_mut().enumerate().skip(1) {
                    current = current.iter().map(|v| diffuse_step(&att, v)).collect();
                    if step_values.contains(&t) {
                        *slot = Some(
                            img.cams
                                .iter()
                                .zip(&current)
                                .map(|(cam, v)| {
                                    let mut m =
                                        ActivationMap { class_id: cam.class_id, grid: cam.grid, data: v.clone() };
                                    m.normalize_max();
                                    m
                                })
                                .collect(),
                        );
                    }
                }
                Ok(step_values.iter().map(|&t| by_steps[t].clone().expect("computed above")).collect())
            })
            .collect::<Result<_>>()?;
        for (ti, &steps) in step_values.iter().enumerate() {
            let eval: Vec<EvalImage> = images
                .iter()
                .zip(&diffused)
                .map(|(img, maps)| EvalImage { maps: maps[ti].clone(), gt: img.gt.clone() })
                .collect();
            let reports = sweep_threshold(&eval, thresholds)?;
            let best = best_report(&reports).expect("thresholds nonempty");
            rows.push(SensitivityRow {
                k,
                steps,
                best_threshold: best.threshold,
                miou: best.scores.miou,
                fp_rate: best.scores.fp_rate,
                fn_rate: best.scores.fn_rate,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn map(class: usize, grid: Grid, data: Vec<f64>) -> ActivationMap {
        ActivationMap::new(class, grid, data).unwrap()
    }

    #[test]
    fn saturated_map_is_all_foreground() {
        let g = Grid::new(3, 3);
        let m = seed_mask(&[map(2, g, vec![1.0; 9])], 0.5, 3).unwrap();
        assert!(m.data().iter().all(|&v| v == 3));
        let m = seed_mask(&[map(2, g, vec![0.0; 9])], 0.5, 3).unwrap();
        assert!(m.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn overlapping_maps_match_pixel_loop() {
        let g = Grid::new(4, 4);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(8);
        let a: Vec<f64> = (0..16).map(|_| (rng.random::<f64>() * 4.0).round() / 4.0).collect();
        let b: Vec<f64> = (0..16).map(|_| (rng.random::<f64>() * 4.0).round() / 4.0).collect();
        // pass maps out of class order to exercise the tie rule
        let maps = [map(3, g, b.clone()), map(1, g, a.clone())];
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mask = seed_mask(&maps, t, 4).unwrap();
            for i in 0..16 {
                let (cls, v) = if b[i] > a[i] { (4u8, b[i]) } else { (2u8, a[i]) };
                let expected = if v >= t { cls } else { 0 };
                assert_eq!(mask.data()[i], expected, "pixel {i} threshold {t}");
            }
        }
    }

    #[test]
    fn seed_mask_errors() {
        let g = Grid::new(2, 2);
        assert!(matches!(
            seed_mask(&[map(0, g, vec![0.0; 4]), map(0, g, vec![0.0; 4])], 0.5, 2),
            Err(Error::DuplicateClass(0))
        ));
        assert!(matches!(
            seed_mask(&[map(0, g, vec![0.0; 4]), map(1, Grid::new(1, 4), vec![0.0; 4])], 0.5, 2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn perfect_prediction() {
        let gt = SeedMask::new(Grid::new(2, 3), 2, vec![0, 1, 2, 2, 255, 0]).unwrap();
        let stats = confusion(&gt, &gt).unwrap();
        assert!(stats.false_positive.iter().chain(&stats.false_negative).all(|&c| c == 0));
        assert_eq!(stats.evaluated, 5);
        assert_eq!(miou(&stats).unwrap().miou, 1.0);
    }

    #[test]
    fn all_background_prediction() {
        let g = Grid::new(10, 10);
        let pred = SeedMask::new(g, 1, vec![0; 100]).unwrap();
        let gt = SeedMask::new(g, 1, vec![1; 100]).unwrap();
        let stats = confusion(&pred, &gt).unwrap();
        assert_eq!(stats.false_negative[1], 100);
        assert_eq!(stats.false_positive[1], 0);
        let s = miou(&stats).unwrap();
        assert_eq!(s.per_class_iou, vec![Some(0.0), Some(0.0)]);
        assert_eq!(s.fn_rate, 1.0);
        assert_eq!(s.fp_rate, 0.0);
    }

    #[test]
    fn disjoint_regions_score_zero() {
        let g = Grid::new(1, 4);
        let pred = SeedMask::new(g, 1, vec![1, 1, 0, 0]).unwrap();
        let gt = SeedMask::new(g, 1, vec![0, 0, 1, 1]).unwrap();
        let s = miou(&confusion(&pred, &gt).unwrap()).unwrap();
        assert_eq!(s.per_class_iou[1], Some(0.0));
    }

    #[test]
    fn three_class_hand_count() {
        // 6x6, classes bg/1/2; counts enumerated by hand below
        #[rustfmt::skip]
        let gt = vec![
            0, 0, 0, 1, 1, 1,
            0, 0, 0, 1, 1, 1,
            0, 0, 0, 1, 1, 1,
            2, 2, 2, 0, 0, 0,
            2, 2, 2, 0, 0, 0,
            2, 2, 2, 0, 0, 255,
        ];
        #[rustfmt::skip]
        let pred = vec![
            0, 0, 1, 1, 1, 1,
            0, 0, 1, 1, 1, 1,
            0, 0, 0, 0, 1, 1,
            2, 2, 0, 0, 0, 0,
            2, 2, 0, 0, 0, 2,
            2, 2, 2, 0, 0, 2,
        ];
        let g = Grid::new(6, 6);
        let stats = confusion(&SeedMask::new(g, 2, pred).unwrap(), &SeedMask::new(g, 2, gt).unwrap()).unwrap();
        // bg: TP 14; FP at (2,3),(3,2),(4,2); FN at (0,2),(1,2),(4,5)
        // c1: TP 8; FP at (0,2),(1,2); FN at (2,3)
        // c2: TP 7; FP at (4,5); FN at (3,2),(4,2)
        assert_eq!(stats.true_positive, vec![14, 8, 7]);
        assert_eq!(stats.false_positive, vec![3, 2, 1]);
        assert_eq!(stats.false_negative, vec![3, 1, 2]);
        assert_eq!(stats.evaluated, 35);
        let s = miou(&stats).unwrap();
        let iou = [14.0 / 20.0, 8.0 / 11.0, 7.0 / 10.0];
        for (got, want) in s.per_class_iou.iter().zip(iou) {
            assert!((got.unwrap() - want).abs() < 1e-12);
        }
        assert!((s.miou - iou.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((s.fp_rate - 3.0 / 35.0).abs() < 1e-12);
        assert!((s.fn_rate - 3.0 / 35.0).abs() < 1e-12);
    }

    #[test]
    fn empty_evaluation() {
        let g = Grid::new(1, 2);
        let gt = SeedMask::new(g, 1, vec![255, 255]).unwrap();
        let pred = SeedMask::new(g, 1, vec![0, 1]).unwrap();
        assert!(matches!(miou(&confusion(&pred, &gt).unwrap()), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn mask_value_validation() {
        assert!(SeedMask::new(Grid::new(1, 2), 2, vec![3, 0]).is_err());
        assert!(SeedMask::new(Grid::new(1, 2), 2, vec![255, 2]).is_ok());
    }

    #[test]
    fn zero_threshold_labels_everything() {
        let g = Grid::new(2, 2);
        let img = EvalImage {
            maps: vec![map(0, g, vec![0.0, 0.1, 0.0, 0.3]), map(1, g, vec![0.0, 0.2, 0.5, 0.1])],
            gt: SeedMask::new(g, 2, vec![1, 2, 2, 1]).unwrap(),
        };
        let reports = sweep_threshold(&[img], &[0.0]).unwrap();
        assert_eq!(reports[0].scores.miou, 1.0);
    }

    #[test]
    fn threshold_grid_values() {
        let g = default_thresholds();
        assert_eq!(g.len(), 99);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[6], 0.07);
        assert_eq!(g[98], 0.99);
        assert_eq!(threshold_grid(0.0, 1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(threshold_grid(0.5, 1.5, 0.5).is_err());
        assert!(threshold_grid(0.5, 0.1, 0.1).is_err());
    }

    #[test]
    fn best_report_prefers_first_on_ties() {
        let mk = |t: f64, m: f64| EvalReport {
            threshold: t,
            scores: Scores { per_class_iou: vec![], miou: m, fp_rate: 0.0, fn_rate: 0.0 },
        };
        let r = [mk(0.1, 0.5), mk(0.2, 0.7), mk(0.3, 0.7)];
        assert_eq!(best_report(&r).unwrap().threshold, 0.2);
    }

    fn random_eval_set(seed: u64, images: usize) -> Vec<EvalImage> {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..images)
            .map(|_| {
                let g = Grid::new(4, 4);
                let maps = (0..2).map(|c| map(c, g, (0..16).map(|_| rng.random()).collect())).collect();
                let gt = (0..16).map(|_| [0u8, 1, 2, 255][rng.random_range(0..4)]).collect();
                EvalImage { maps, gt: SeedMask::new(Grid::new(8, 8), 2, upsample_mask(gt)).unwrap() }
            })
            .collect()
    }

    fn upsample_mask(m: Vec<u8>) -> Vec<u8> {
        (0..64).map(|i| m[(i / 8 / 2) * 4 + (i % 8) / 2]).collect()
    }

    #[test]
    fn sweep_is_order_independent_and_best_dominates() {
        let images = random_eval_set(21, 5);
        let thresholds = default_thresholds();
        let forward = sweep_threshold(&images, &thresholds).unwrap();
        let mut reversed = images.clone();
        reversed.reverse();
        assert_eq!(forward, sweep_threshold(&reversed, &thresholds).unwrap());
        let best = best_report(&forward).unwrap().miou();
        for t in &thresholds {
            let single = sweep_threshold(&images, &[*t]).unwrap();
            assert!(best >= single[0].miou());
        }
    }

    #[test]
    fn sweep_matches_per_image_seed_masks() {
        let images = random_eval_set(22, 3);
        for t in [0.2, 0.5, 0.8] {
            let mut total = ConfusionStats::zeros(2);
            for img in &images {
                let up: Vec<ActivationMap> =
                    img.maps.iter().map(|m| upsample_bilinear(m, img.gt.grid()).unwrap()).collect();
                let pred = seed_mask(&up, t, 2).unwrap();
                total.merge_from(&confusion(&pred, &img.gt).unwrap());
            }
            let report = &sweep_threshold(&images, &[t]).unwrap()[0];
            assert_eq!(report.scores, miou(&total).unwrap());
        }
    }

    proptest! {
        #[test]
        fn confusion_matches_scalar_loop(
            pred in proptest::collection::vec(0u8..4, 64),
            gt in proptest::collection::vec(prop_oneof![0u8..4, Just(255u8)], 64),
        ) {
            let g = Grid::new(8, 8);
            let stats = confusion(&SeedMask::new(g, 3, pred.clone()).unwrap(), &SeedMask::new(g, 3, gt.clone()).unwrap()).unwrap();
            for c in 0..4u8 {
                let tp = pred.iter().zip(&gt).filter(|(p, g)| **g != 255 && **p == c && **g == c).count() as u64;
                let fp = pred.iter().zip(&gt).filter(|(p, g)| **g != 255 && **p == c && **g != c).count() as u64;
                let fn_ = pred.iter().zip(&gt).filter(|(p, g)| **g != 255 && **p != c && **g == c).count() as u64;
                prop_assert_eq!(stats.true_positive[c as usize], tp);
                prop_assert_eq!(stats.false_positive[c as usize], fp);
                prop_assert_eq!(stats.false_negative[c as usize], fn_);
            }
            let evaluated = gt.iter().filter(|&&g| g != 255).count() as u64;
            prop_assert_eq!(stats.true_positive.iter().sum::<u64>() + stats.false_positive.iter().sum::<u64>(), evaluated);
        }

        #[test]
        fn raising_threshold_never_adds_foreground(
            a in proptest::collection::vec(0.0f64..1.0, 9),
            b in proptest::collection::vec(0.0f64..1.0, 9),
            t1 in 0.0f64..1.0, dt in 0.0f64..1.0,
        ) {
            let g = Grid::new(3, 3);
            let maps = [map(0, g, a), map(1, g, b)];
            let low = seed_mask(&maps, t1, 2).unwrap();
            let high = seed_mask(&maps, t1 + dt, 2).unwrap();
            for (l, h) in low.data().iter().zip(high.data()) {
                prop_assert!(*l != 0 || *h == 0);
            }
        }

        #[test]
        fn invariant_under_joint_monotone_transform(
            a in proptest::collection::vec(0.0f64..1.0, 9),
            b in proptest::collection::vec(0.0f64..1.0, 9),
            t in 0.0f64..1.0, scale in 0.1f64..5.0, shift in -1.0f64..1.0,
        ) {
            let g = Grid::new(3, 3);
            let f = |x: f64| (scale * x).exp() + shift;
            let maps = [map(0, g, a.clone()), map(1, g, b.clone())];
            let moved = [map(0, g, a.iter().map(|&x| f(x)).collect()), map(1, g, b.iter().map(|&x| f(x)).collect())];
            prop_assert_eq!(seed_mask(&maps, t, 2).unwrap(), seed_mask(&moved, f(t), 2).unwrap());
        }

        #[test]
        fn identical_masks_score_one(data in proptest::collection::vec(prop_oneof![0u8..5, Just(255u8)], 1..50)) {
            prop_assume!(data.iter().any(|&v| v != 255));
            let m = SeedMask::new(Grid::new(1, data.len()), 4, data).unwrap();
            prop_assert_eq!(miou(&confusion(&m, &m).unwrap()).unwrap().miou, 1.0);
        }
    }
}
