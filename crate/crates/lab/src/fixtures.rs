//! Small ready-made configurations for examples, smoke runs and tests.

use cilab_core::nn::Activation;
use cilab_core::rehearsal::{PolicyKind, RehearsalPolicyConfig};
use cilab_core::rsgd::{LrSchedule, RsgdConfig};
use cilab_core::scenario::{BenchmarkFactorGrid, SyntheticSpec};

use crate::config::{
    BenchConfig, DataConfig, DiagnosticsConfig, ExperimentConfig, ExperimentTemplate, ModelConfig, SCHEMA_VERSION,
};

/// 8-dimensional classes, each a two-blob Gaussian mixture with its
/// own spread, so classes overlap unevenly.
pub fn synthetic(classes: usize) -> SyntheticSpec {
    SyntheticSpec {
        classes,
        train_per_class: 60,
        test_per_class: 40,
        input_dim: 8,
        spread: 1.0,
        separation: 2.0,
        spread_jitter: 0.5,
        modes_per_class: 2,
        mode_scatter: 0.7,
    }
}

pub fn sgd(epochs: usize) -> RsgdConfig {
    RsgdConfig {
        alpha: 0.5,
        batch_size: 32,
        learning_rate: 0.05,
        schedule: LrSchedule::Cosine,
        momentum: 0.9,
        weight_decay: 5e-4,
        epochs,
        record_gradients: false,
    }
}

pub fn template() -> ExperimentTemplate {
    ExperimentTemplate {
        data: DataConfig {
            synthetic: synthetic(12),
            seed: 7,
        },
        model: ModelConfig {
            hidden: vec![32],
            activation: Activation::Relu,
        },
        first_step: sgd(20),
        rsgd: sgd(10),
        policy: PolicyKind::ClassBalancedUniform,
        diagnostics: DiagnosticsConfig::default(),
    }
}

/// One experiment over `sequence` with the shared template.
pub fn experiment(id: &str, sequence: Vec<Vec<usize>>, retention: f64, seed: u64) -> ExperimentConfig {
    template().instantiate(id.to_string(), sequence, retention, seed)
}

/// Two steps of two classes each.
pub fn two_step(retention: f64) -> ExperimentConfig {
    experiment("two-step", vec![vec![0, 1], vec![2, 3]], retention, 1)
}

/// Four steps of three classes each.
pub fn four_step(retention: f64, seed: u64) -> ExperimentConfig {
    experiment(
        "four-step",
        vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8], vec![9, 10, 11]],
        retention,
        seed,
    )
}

/// 3 retentions x 2 class percents (25%, 50% of 12 classes), `per_partition`
/// experiments each.
pub fn bench(per_partition: usize) -> BenchConfig {
    BenchConfig {
        schema_version: SCHEMA_VERSION,
        grid: BenchmarkFactorGrid {
            total_classes: 12,
            class_percents: vec![25, 50],
            retentions: vec![0.05, 0.15, 0.5],
            seeds: Vec::new(),
            steps: 4,
            max_sequences_per_percent: Some(200),
        },
        per_partition,
        sampling_seed: 2024,
        bootstrap_resamples: 1000,
        template: template(),
    }
}

/// A single-partition sweep.
pub fn single_partition(per_partition: usize, seeds: Vec<u64>) -> BenchConfig {
    let mut b = bench(per_partition);
    b.grid.class_percents = vec![25];
    b.grid.retentions = vec![0.15];
    b.grid.seeds = seeds;
    b
}

/// Same experiment under another rehearsal policy.
pub fn with_policy(mut cfg: ExperimentConfig, kind: PolicyKind) -> ExperimentConfig {
    cfg.rehearsal = RehearsalPolicyConfig {
        kind,
        retention: cfg.rehearsal.retention,
    };
    cfg
}
