//! From-scratch two-layer classifier: parameters, forward/backward, Adam,
//! mini-batch passes and binary snapshots.

mod adam;
mod model;
mod params;
mod snapshot;
mod train;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use model::{argmax, log_sum_exp, loss_and_grad, predict, predict_classes, Batch};
pub use params::{Layer, Layout, ModelParams};
pub use snapshot::{decode_snapshot, encode_snapshot, load_snapshot, save_snapshot, SNAPSHOT_MAGIC};
pub use train::{train_one_pass, PassReport, Trainer};

pub(crate) use model::cross_entropy_sum;
pub(crate) use params::l2;
