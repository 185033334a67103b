mod common;

use common::gradcheck::all_checks;

#[test]
fn reverse_mode_matches_central_differences() {
    for seed in [0, 17, 101] {
        for c in all_checks(seed) {
            assert!(c.rel_error < 1e-5, "seed {seed} {}: relative error {:.3e}", c.name, c.rel_error);
        }
    }
}

#[test]
fn every_layer_type_is_covered() {
    let names: Vec<String> = all_checks(0).into_iter().map(|c| c.name).collect();
    for layer in ["conv2d", "relu", "maxpool2", "channel_attn", "spatial_attn", "dense", "conv_attn"] {
        assert!(names.iter().any(|n| n.starts_with(layer)), "no check for {layer}");
    }
}
