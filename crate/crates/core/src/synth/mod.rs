//! Synthetic images with known structure.
//!
//! Each image holds a few disk-shaped objects ("blobs") on background. The
//! generated tensors reproduce two failure modes that attention-based CAM
//! refinement has to cope with:
//!
//! * the class logits only fire on a sub-part of each blob, so the vanilla
//!   CAM misses most of the object;
//! * every blob token routes a fraction `spurious_rate` of its attention to
//!   a "distractor" patch of background tied to that blob, a long-range but
//!   spurious dependency.
//!
//! Within blobs and within background, attention is Gaussian in grid
//! distance. All randomness flows from a Xoshiro256++ generator seeded by
//! `seed`; image `i` uses the stream after `i` jumps.

pub mod oracle;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::cam::{AttentionStack, ClassifierWeights, FeatureMap};
use crate::error::{Error, Result};
use crate::eval::SeedMask;
use crate::grid::Grid;
use crate::manifest::Instance;
use crate::random_walk::BoundaryMap;

/// Generator parameters. Every field has a default, so `{}` is a valid spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Token grid `[height, width]`.
    pub grid: [usize; 2],
    /// Ground-truth resolution is `image_scale` times the token grid.
    pub image_scale: usize,
    pub num_classes: usize,
    /// Inclusive `[min, max]` blob count per image.
    pub blobs: [usize; 2],
    /// Blob radius range in token units.
    pub radius: [f64; 2],
    /// Attention locality scale in token units.
    pub sigma: f64,
    /// Fraction of each blob token's attention sent to its distractor patch.
    pub spurious_rate: f64,
    pub distractor_radius: f64,
    /// Under-activated CAM footprint as a fraction of blob radius.
    pub cam_focus: f64,
    pub noise_channels: usize,
    pub layers: usize,
    pub heads: usize,
    pub images: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            grid: [24, 24],
            image_scale: 2,
            num_classes: 4,
            blobs: [1, 2],
            radius: [3.5, 5.5],
            sigma: 2.5,
            spurious_rate: 0.15,
            distractor_radius: 2.0,
            cam_focus: 0.45,
            noise_channels: 4,
            layers: 2,
            heads: 3,
            images: 20,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("synth spec: {m}")));
        if self.grid[0] == 0 || self.grid[1] == 0 || self.image_scale == 0 {
            return bad("grid and image_scale must be positive");
        }
        if self.num_classes == 0 || self.num_classes > 254 {
            return bad("num_classes must be in 1..=254");
        }
        if self.blobs[0] == 0 || self.blobs[0] > self.blobs[1] || self.blobs[1] > self.num_classes {
            return bad("blobs must satisfy 1 <= min <= max <= num_classes");
        }
        if !(self.radius[0] > 0.0 && self.radius[0] <= self.radius[1]) {
            return bad("radius range must be positive and ordered");
        }
        if !(self.sigma > 0.0 && self.cam_focus > 0.0 && self.distractor_radius >= 0.0) {
            return bad("sigma, cam_focus must be positive and distractor_radius nonnegative");
        }
        if !(0.0..1.0).contains(&self.spurious_rate) {
            return bad("spurious_rate must be in [0, 1)");
        }
        if self.layers == 0 || self.heads == 0 || self.images == 0 {
            return bad("layers, heads and images must be positive");
        }
        Ok(())
    }

    pub fn token_grid(&self) -> Grid {
        Grid::new(self.grid[0], self.grid[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub class_id: usize,
    pub center: (f64, f64),
    pub radius: f64,
    /// Background tokens this blob spuriously attends to.
    pub distractor: Vec<usize>,
}

/// A generated image together with its hidden structure.
#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub instance: Instance,
    pub blobs: Vec<Blob>,
    /// Per token: 0 for background, `b + 1` for blob `b`.
    pub regions: Vec<usize>,
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn token_pos(grid: Grid, t: usize) -> (f64, f64) {
    let (r, c) = grid.coords(t);
    (r as f64, c as f64)
}

/// Generates image `index` of the dataset described by `spec`.
pub fn gen_instance(spec: &SynthSpec, index: usize) -> Result<SynthInstance> {
    spec.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    for _ in 0..index {
        rng.jump();
    }
    let grid = spec.token_grid();
    let n = grid.len();

    // classes and blob placement
    let count = rng.random_range(spec.blobs[0]..=spec.blobs[1]);
    let mut classes: Vec<usize> = (0..spec.num_classes).collect();
    for i in 0..count {
        let j = rng.random_range(i..classes.len());
        classes.swap(i, j);
    }
    let mut blobs: Vec<Blob> = Vec::new();
    for &class_id in &classes[..count] {
        for _attempt in 0..200 {
            let radius = rng.random_range(spec.radius[0]..=spec.radius[1]);
            let center = (
                rng.random_range(0.0..(grid.height - 1) as f64 + f64::EPSILON),
                rng.random_range(0.0..(grid.width - 1) as f64 + f64::EPSILON),
            );
            let clear = blobs.iter().all(|b| dist2(b.center, center).sqrt() >= b.radius + radius + 1.5);
            if clear {
                blobs.push(Blob { class_id, center, radius, distractor: Vec::new() });
                break;
            }
        }
    }
    if blobs.is_empty() {
        return Err(Error::InvalidParameter("synth spec: no blob fits the grid".into()));
    }
    blobs.sort_by_key(|b| b.class_id);

    let mut regions = vec![0usize; n];
    for (t, region) in regions.iter_mut().enumerate() {
        let p = token_pos(grid, t);
        if let Some(b) = blobs.iter().position(|b| dist2(b.center, p) <= b.radius * b.radius) {
            *region = b + 1;
        }
    }

    // distractor patches: background tokens away from every blob
    if spec.spurious_rate > 0.0 {
        let margin = 2.0;
        let candidates: Vec<usize> = (0..n)
            .filter(|&t| {
                let p = token_pos(grid, t);
                regions[t] == 0
                    && blobs.iter().all(|b| dist2(b.center, p).sqrt() >= b.radius + spec.distractor_radius + margin)
            })
            .collect();
        let mut taken = vec![false; n];
        for blob in &mut blobs {
            let free: Vec<usize> = candidates.iter().copied().filter(|&t| !taken[t]).collect();
            if free.is_empty() {
                continue;
            }
            let centre = token_pos(grid, free[rng.random_range(0..free.len())]);
            blob.distractor = (0..n)
                .filter(|&t| {
                    regions[t] == 0 && !taken[t] && dist2(token_pos(grid, t), centre) <= spec.distractor_radius.powi(2)
                })
                .collect();
            for &t in &blob.distractor {
                taken[t] = true;
            }
        }
    }

    let attention = gen_attention(spec, grid, &regions, &blobs, &mut rng)?;
    let (features, weights) = gen_features(spec, grid, &blobs, &mut rng)?;
    let gt_mask = gen_gt(spec, grid, &blobs)?;
    let boundary = gen_boundary(grid, &regions)?;

    let instance = Instance {
        id: format!("img_{index:04}"),
        features,
        weights,
        attention,
        labels: blobs.iter().map(|b| b.class_id).collect(),
        boundary: Some(boundary),
        gt_mask: Some(gt_mask),
    };
    Ok(SynthInstance { instance, blobs, regions })
}

fn gen_attention(
    spec: &SynthSpec,
    grid: Grid,
    regions: &[usize],
    blobs: &[Blob],
    rng: &mut Xoshiro256PlusPlus,
) -> Result<AttentionStack> {
    let n = grid.len();
    let slices = spec.layers * spec.heads;
    let mut data = Vec::with_capacity(slices * n * n);
    let mut row = vec![0.0f64; n];
    for _ in 0..slices {
        let sigma = spec.sigma * rng.random_range(0.8..1.2);
        let two_s2 = 2.0 * sigma * sigma;
        for i in 0..n {
            let pi = token_pos(grid, i);
            row.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..n {
                if regions[j] == regions[i] {
                    let jitter = rng.random_range(0.9..1.1);
                    row[j] = (-dist2(pi, token_pos(grid, j)) / two_s2).exp() * jitter;
                }
            }
            normalize(&mut row);
            let spurious = match regions[i] {
                0 => None,
                b => Some(&blobs[b - 1].distractor).filter(|d| !d.is_empty()),
            };
            if let Some(distractor) = spurious {
                row.iter_mut().for_each(|v| *v *= 1.0 - spec.spurious_rate);
                let share = spec.spurious_rate / distractor.len() as f64;
                for &t in distractor {
                    row[t] += share * rng.random_range(0.9..1.1);
                }
                normalize(&mut row);
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
    }
    AttentionStack::new(spec.layers, spec.heads, n, data)
}

fn normalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
}

/// Logit offset: CAM support ends where the focus bump drops below it.
const LOGIT_BIAS: f64 = 0.3;
const FEATURE_NOISE: f64 = 0.03;

fn gen_features(
    spec: &SynthSpec,
    grid: Grid,
    blobs: &[Blob],
    rng: &mut Xoshiro256PlusPlus,
) -> Result<(FeatureMap, ClassifierWeights)> {
    let k = spec.num_classes;
    let channels = k + spec.noise_channels;
    let n = grid.len();
    let mut data = vec![0.0f32; channels * n];
    for c in 0..k {
        let blob = blobs.iter().find(|b| b.class_id == c);
        let focus = blob.map(|b| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let offset = rng.random_range(0.0..0.5) * b.radius;
            ((b.center.0 + offset * angle.sin()), (b.center.1 + offset * angle.cos()), spec.cam_focus * b.radius)
        });
        for t in 0..n {
            let bump = match focus {
                Some((fy, fx, s)) => (-dist2(token_pos(grid, t), (fy, fx)) / (2.0 * s * s)).exp(),
                None => 0.0,
            };
            data[c * n + t] = (bump - LOGIT_BIAS + FEATURE_NOISE * rng.random_range(-1.0..1.0)) as f32;
        }
    }
    for v in &mut data[k * n..] {
        *v = rng.random_range(-1.0f32..1.0);
    }
    let mut weights = vec![0.0f32; k * channels];
    for c in 0..k {
        weights[c * channels + c] = 1.0;
        for e in k..channels {
            weights[c * channels + e] = rng.random_range(-0.02f32..0.02);
        }
    }
    Ok((FeatureMap::new(channels, grid, data)?, ClassifierWeights::new(k, channels, weights)?))
}

fn gen_gt(spec: &SynthSpec, grid: Grid, blobs: &[Blob]) -> Result<SeedMask> {
    let s = spec.image_scale;
    let image = Grid::new(grid.height * s, grid.width * s);
    let data = (0..image.len())
        .map(|p| {
            let (y, x) = image.coords(p);
            let fy = (y as f64 + 0.5) / s as f64 - 0.5;
            let fx = (x as f64 + 0.5) / s as f64 - 0.5;
            blobs.iter().find(|b| dist2(b.center, (fy, fx)) <= b.radius * b.radius).map_or(0, |b| b.class_id as u8 + 1)
        })
        .collect();
    SeedMask::new(image, spec.num_classes, data)
}

/// 1 on tokens with a 4-neighbor in another region, 0 elsewhere.
fn gen_boundary(grid: Grid, regions: &[usize]) -> Result<BoundaryMap> {
    let data = (0..grid.len())
        .map(|t| {
            let (r, c) = grid.coords(t);
            let edge = [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dr, dc)| {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                rr >= 0
                    && cc >= 0
                    && (rr as usize) < grid.height
                    && (cc as usize) < grid.width
                    && regions[grid.index(rr as usize, cc as usize)] != regions[t]
            });
            if edge {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    BoundaryMap::new(grid, data)
}

pub fn gen_dataset(spec: &SynthSpec) -> Result<Vec<SynthInstance>> {
    (0..spec.images).map(|i| gen_instance(spec, i)).collect()
}

/// Writes `images` manifest directories `img_0000`, `img_0001`, ... under `out`.
pub fn write_dataset(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<Vec<String>> {
    let out = out.as_ref();
    gen_dataset(spec)?
        .into_iter()
        .map(|s| {
            s.instance.write(out.join(&s.instance.id))?;
            Ok(s.instance.id)
        })
        .collect()
}
