//! Base models, initialisers, optimizers, datasets and the training loop.

mod init;
mod model;
mod optim;
mod task;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::losses::LossError;
use crate::lossnet::LossNetError;

pub use init::{
    glorot_bound, glorot_init, glorot_std, he_bound, he_init, he_std, init_weights, InitMode,
    InitScheme,
};
pub use model::MlpModel;
pub use optim::{OptimizerConfig, OptimizerState};
pub use task::{
    load_csv_task, load_idx_images, make_synthetic_regression, make_two_moons, normalize,
    split_rows, Normalization, Split, Targets, Task, TaskKind,
};
pub use train::{
    learned_inputs, loss_and_grads, metric, one_hot, sample_batch, split_metric, train,
    train_params, LossFn, TrainConfig, TrainReport, BATCH_STREAM, INIT_STREAM,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("no `target` column in the CSV header")]
    MissingLabel,
    #[error("IDX magic mismatch: expected {expected:#010x}, got {got:#010x}")]
    BadMagic { expected: u32, got: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    LossNet(#[from] LossNetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    MetaNet(#[from] crate::adalfl::MetaNetError),
}
