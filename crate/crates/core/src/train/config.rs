use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Keep every `sample_stride`-th frame of each sequence.
    pub sample_stride: usize,
    pub input_size: usize,
    pub seed: u64,
    /// Write a checkpoint after every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    /// Directory of sequence subdirectories, or of frames directly.
    pub dataset_root: PathBuf,
    /// Where precomputed light labels live.
    pub label_cache: PathBuf,
    /// Smoothing weight used when computing labels.
    pub lambda_smooth: f64,
    /// Checkpoints, the loss log and final weights go here.
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-6,
            weight_decay: 1e-4,
            batch_size: 4,
            sample_stride: 50,
            input_size: 256,
            seed: 0,
            checkpoint_every: 10,
            dataset_root: PathBuf::from("data"),
            label_cache: PathBuf::from("labels"),
            lambda_smooth: crate::label::DEFAULT_LAMBDA,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.sample_stride == 0 {
            return bad("epochs, batch_size and sample_stride must be positive");
        }
        if self.checkpoint_every == 0 || self.input_size == 0 {
            return bad("checkpoint_every and input_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lambda_smooth > 0.0 && self.lambda_smooth.is_finite()) {
            return bad("lambda_smooth must be positive");
        }
        Ok(())
    }
}
