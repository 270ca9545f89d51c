//! Desk-scale task and hyperparameter presets.
//!
//! The regression preset unrolls SGD at `alpha = 0.01`: with a small base
//! rate the local search can rescale the loss and so tune the effective
//! step size, which is where learned losses gain most on this task.

use crate::adalfl::AdaConfig;
use crate::evomal::MetaConfig;
use crate::harness::{
    make_synthetic_regression, make_two_moons, HarnessError, OptimizerConfig, Task, TrainConfig,
};
use crate::symbolic::GpConfig;

pub const SYNTH_REG_ROWS: usize = 500;
pub const SYNTH_REG_NOISE: f64 = 0.2;
pub const TWO_MOONS_ROWS: usize = 500;
pub const TWO_MOONS_NOISE: f64 = 0.1;

pub fn synth_regression_task(seed: u64) -> Result<Task, HarnessError> {
    make_synthetic_regression(seed, SYNTH_REG_ROWS, SYNTH_REG_NOISE)
}

pub fn two_moons_task(seed: u64) -> Result<Task, HarnessError> {
    make_two_moons(seed, TWO_MOONS_ROWS, TWO_MOONS_NOISE)
}

/// Base training for the regression search: 500 SGD steps at 0.01.
pub fn synth_regression_train(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 500,
        batch_size: 32,
        optimizer: OptimizerConfig::sgd(0.01),
        hidden: vec![32, 32],
        seed,
        eval_every: 0,
    }
}

pub fn synth_regression_meta(seed: u64, workers: usize) -> MetaConfig {
    MetaConfig {
        base: synth_regression_train(seed),
        workers,
        ..MetaConfig::default()
    }
}

/// Population 25 over 10 generations.
pub fn synth_regression_gp(seed: u64) -> GpConfig {
    GpConfig {
        population_size: 25,
        generations: 10,
        seed,
        ..GpConfig::default()
    }
}

pub fn two_moons_train(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 1000,
        batch_size: 32,
        optimizer: OptimizerConfig::sgd(0.1),
        hidden: vec![32, 32],
        seed,
        eval_every: 100,
    }
}

pub fn two_moons_adapt(seed: u64) -> AdaConfig {
    AdaConfig {
        init_steps: 2500,
        train: two_moons_train(seed),
        ..AdaConfig::default()
    }
}
