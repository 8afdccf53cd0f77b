#![allow(dead_code)]

use ordino::harness::RunConfig;

/// Four ranks of small noisy bars with a narrow toy backbone.
pub fn tiny_config() -> RunConfig {
    RunConfig::from_json(
        r#"{
        "seed": 4,
        "task": {"template": "a bar of {n} units."},
        "data": {"source": {"kind": "synthetic", "noise_sigma": 0.3,
            "spec": {"label_values": [1, 2, 3, 4], "counts": [24, 24, 24, 24], "height": 8, "width": 8}}},
        "backbone": {"d_embed": 8, "d_feat": 8, "text_hidden": 16, "image_hidden": 16},
        "model": {"heads": 2},
        "train": {"stage1_epochs": 2, "stage2_epochs": 3, "decay_epoch": 1, "batch_size": 16,
                  "lr_visual": 1e-3, "los_windows": [2, 3]},
        "deterministic": true
    }"#,
    )
    .unwrap()
}
