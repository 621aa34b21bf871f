//! Named desk-scale experiment setups.

use fedmeter_core::availability::DropoutMode;
use fedmeter_core::fl::{Method, TrainConfig};
use fedmeter_core::privacy::BudgetStrategy;

use crate::config::ExperimentConfig;

pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// List keys that must stay nonempty for the preset to make sense.
    pub required: &'static [&'static str],
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "heterogeneity",
        summary: "4 communities, A1 vs A2 vs A4, no failures, no DP",
        required: &["methods"],
    },
    PresetInfo {
        name: "dropout",
        summary: "16 communities, A2 vs A4, dropout ratio 0.25 / 0.5 / 0.75",
        required: &["methods", "sweep_dropout_ratio"],
    },
    PresetInfo {
        name: "privacy",
        summary: "4 communities, A3 vs A4 at dropout 0.5, epsilon 0.1 / 0.5 / 1",
        required: &["methods", "sweep_epsilon"],
    },
    PresetInfo {
        name: "epsilon",
        summary: "A4 without failures, epsilon inf / 1 / 0.1 / 0.01 / 0.001",
        required: &["sweep_epsilon"],
    },
    PresetInfo {
        name: "mu",
        summary: "A4 without failures, mu 0 / 5e-4 / 5e-3 / 5e-2",
        required: &["sweep_mu"],
    },
    PresetInfo {
        name: "epochs",
        summary: "A4 without failures, local epochs 2 / 5 / 10 / 20",
        required: &["sweep_epochs_local"],
    },
];

/// Desk-scale training setup: 60 rounds, E2 = 2 E1, equal learning rates.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        rounds: 60,
        epochs_personalized: 5,
        epochs_local: 10,
        lr_personalized: 0.01,
        lr_local: 0.01,
        mu: 5e-4,
        batch_size: 1,
        hidden_dim: 40,
        method: Method::A4,
        dp_enabled: false,
        clip_threshold: 0.5,
        epsilon_per_round: 0.1,
        budget_strategy: BudgetStrategy::Dynamic,
        dropout_ratio: 0.0,
        dropout_mode: DropoutMode::UniformCount,
        master_seed: 0,
    }
}

pub fn required_sweeps(name: &str) -> Option<&'static [&'static str]> {
    PRESETS.iter().find(|p| p.name == name).map(|p| p.required)
}

pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    let base = ExperimentConfig {
        preset: Some(name.to_string()),
        num_communities: 4,
        samples_per_community: 2000,
        seeds: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    let cfg = match name {
        "heterogeneity" => ExperimentConfig {
            methods: vec![Method::A1, Method::A2, Method::A4],
            ..base
        },
        "dropout" => ExperimentConfig {
            num_communities: 16,
            methods: vec![Method::A2, Method::A4],
            sweep_dropout_ratio: vec![0.25, 0.5, 0.75],
            ..base
        },
        "privacy" => {
            let mut cfg = ExperimentConfig {
                methods: vec![Method::A3, Method::A4],
                sweep_epsilon: vec![0.1, 0.5, 1.0],
                ..base
            };
            cfg.train.dp_enabled = true;
            cfg.train.dropout_ratio = 0.5;
            cfg
        }
        "epsilon" => ExperimentConfig {
            methods: vec![Method::A4],
            sweep_epsilon: vec![f64::INFINITY, 1.0, 0.1, 0.01, 0.001],
            ..base
        },
        "mu" => ExperimentConfig {
            methods: vec![Method::A4],
            sweep_mu: vec![0.0, 5e-4, 5e-3, 5e-2],
            ..base
        },
        "epochs" => ExperimentConfig {
            methods: vec![Method::A4],
            sweep_epochs_local: vec![2, 5, 10, 20],
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}
