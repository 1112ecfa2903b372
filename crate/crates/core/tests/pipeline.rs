use camdiffuse::synth::oracle::{dense_oracle_diffuse, dense_oracle_refine, dense_oracle_similarity};
use camdiffuse::synth::{gen_instance, SynthSpec};
use camdiffuse::{ad_cam, aggregate_attention, compute_cam, DiffusionConfig, Instance};

fn small_spec() -> SynthSpec {
    SynthSpec { grid: [8, 8], radius: [1.5, 2.5], blobs: [1, 2], images: 4, seed: 11, ..Default::default() }
}

#[test]
fn written_instance_reloads_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = gen_instance(&small_spec(), 2).unwrap();
    synth.instance.write(tmp.path().join("img")).unwrap();
    let back = Instance::load(tmp.path().join("img")).unwrap();
    assert_eq!(back.id, synth.instance.id);
    assert_eq!(back.labels, synth.instance.labels);
    assert_eq!(back.features, synth.instance.features);
    assert_eq!(back.attention, synth.instance.attention);
    assert_eq!(back.gt_mask, synth.instance.gt_mask);
    assert_eq!(back.boundary, synth.instance.boundary);
}

#[test]
fn ad_cam_matches_dense_composition_on_synthetic_images() {
    let spec = small_spec();
    for index in 0..spec.images {
        let inst = gen_instance(&spec, index).unwrap().instance;
        let grid = inst.grid();
        let n = grid.len();
        for (k, steps) in [(5, 1), (20, 2), (64, 3)] {
            let maps = ad_cam(
                &inst.features,
                &inst.weights,
                &inst.attention,
                &inst.labels,
                k,
                DiffusionConfig::raw(steps).unwrap(),
            )
            .unwrap();
            let a = aggregate_attention(&inst.attention, grid).unwrap();
            let refined = dense_oracle_refine(&a, &dense_oracle_similarity(&a).unwrap(), k).unwrap();
            for (map, &class) in maps.iter().zip(&inst.labels) {
                let cam = compute_cam(&inst.features, &inst.weights, class).unwrap();
                let expected = dense_oracle_diffuse(&refined, n, &cam.data, steps).unwrap();
                for (got, want) in map.data.iter().zip(&expected) {
                    assert!((got - want).abs() < 1e-9, "image {index}, k {k}, T {steps}: {got} vs {want}");
                }
            }
        }
    }
}
