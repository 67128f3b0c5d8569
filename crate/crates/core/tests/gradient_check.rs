mod common;

use bdrisk_core::model::{Ablation, ModelConfig};

fn check(config: ModelConfig, seed: u64) {
    for (name, rel, norm) in common::gradient_case(config, seed) {
        assert!(rel <= 1e-4, "{name}: relative error {rel:e} (|grad| {norm:e})");
    }
}

#[test]
fn full_model_gradients() {
    for seed in 0..3 {
        check(common::tiny_config(), seed);
    }
}

#[test]
fn ablated_model_gradients() {
    let flags = [
        Ablation { no_temporal_attention: true, ..Ablation::default() },
        Ablation { no_bilstm: true, ..Ablation::default() },
        Ablation { no_uncertainty: true, ..Ablation::default() },
        Ablation { single_task: true, ..Ablation::default() },
        Ablation { no_mood: true, ..Ablation::default() },
        Ablation { no_somatic: true, ..Ablation::default() },
    ];
    for ablation in flags {
        check(ModelConfig { ablation, ..common::tiny_config() }, 11);
    }
}

#[test]
fn merged_scheme_gradients() {
    check(ModelConfig { n_levels: 2, ..common::tiny_config() }, 5);
    check(ModelConfig { n_levels: 3, lstm_layers: 1, ..common::tiny_config() }, 6);
}
