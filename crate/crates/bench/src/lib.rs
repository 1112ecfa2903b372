//! Shared inputs for the benchmarks.

use camdiffuse::synth::{gen_instance, SynthSpec};
use camdiffuse::{aggregate_attention, compute_cam, ActivationMap, AttentionMatrix};

/// Token counts benchmarked: 14x14, 24x24 and 32x32 grids.
pub const SIDES: [usize; 3] = [14, 24, 32];

pub struct Fixture {
    pub attention: AttentionMatrix,
    pub cam: ActivationMap,
}

/// Aggregated attention and one class map of a synthetic image on a
/// `side x side` token grid.
pub fn fixture(side: usize) -> Fixture {
    let r = side as f64 / 5.0;
    let spec = SynthSpec { grid: [side, side], radius: [r, r * 1.4], images: 1, seed: 1, ..Default::default() };
    let inst = gen_instance(&spec, 0).expect("valid spec").instance;
    let attention = aggregate_attention(&inst.attention, inst.grid()).expect("consistent shapes");
    let cam = compute_cam(&inst.features, &inst.weights, inst.labels[0]).expect("labeled class");
    Fixture { attention, cam }
}
