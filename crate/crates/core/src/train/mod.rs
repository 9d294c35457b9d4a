//! Dataset ingestion, the optimisation loop and checkpointing.

mod config;
mod dataset;
mod optim;
pub mod synth;
mod trainer;

pub use config::TrainConfig;
pub use dataset::{sample_frames, DatasetEntry, DatasetIndex};
pub use optim::AdamW;
pub use trainer::{
    accumulate_gradients, batch_loss, epoch_permutation, load_corpus, read_loss_log, train, train_step,
    Batch, Checkpoint, CheckpointMeta, TrainSummary, LOG_HEADER,
};
