//! Neural meta-loss adapted online alongside the base learner, and a
//! learned-learning-rate baseline.

mod net;
mod train;

pub use net::{MetaArch, MetaLossNet, MetaNetError};
pub use train::{
    hypergradient, lr_hypergradient, meta_lr_offline, meta_lr_train, offline_init, online_train,
    snapshot_grid, task_loss, unroll, unrolled_meta_loss, AdaConfig, AdaReport, MetaSource,
    Snapshot, Unrolled, META_STREAM, OFFLINE_STREAM, PHI_STREAM,
};
