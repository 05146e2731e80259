//! Loss, Adam, the epoch loop and checkpoint persistence.

mod adam;
mod checkpoint;
mod loss;
mod manifest;
mod trainer;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint, EpochRecord, Provenance,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{compute_loss, EnergyLoss, EnergyNormalization, LossConfig, LossValue};
pub use manifest::{config_hash, RunManifest};
pub use trainer::{
    dataset_tag, evaluate_loss, finetune, history_csv, train, train_with_hook, EpochContext, ModelInit, Schedule,
};
