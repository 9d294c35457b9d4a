use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and size hyper-parameters of the enhancement network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Side length images are resized to for training.
    pub input_size: usize,
    /// Output channels of each stride-2 feature extraction stage.
    pub extractor_channels: Vec<usize>,
    /// Output channels of each stride-2 decoder stage (light generation and
    /// the content deconvolution stack share this schedule).
    pub decoder_channels: Vec<usize>,
    pub attention_heads: usize,
    /// Channel width of the decomposed features; equals the last extractor
    /// stage.
    pub attention_dim: usize,
    pub ffn_hidden: usize,
    pub estimator_channels: usize,
    /// Number of interweave adjustment iterations.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 256,
            extractor_channels: vec![4, 4, 8, 8],
            decoder_channels: vec![8, 4, 4, 3],
            attention_heads: 2,
            attention_dim: 8,
            ffn_hidden: 32,
            estimator_channels: 16,
            iterations: 8,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Spatial reduction factor of the feature extractor.
    pub fn downsample(&self) -> usize {
        1 << self.extractor_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.extractor_channels.is_empty() {
            return bad("extractor needs at least one stage".into());
        }
        if self.decoder_channels.len() != self.extractor_channels.len() {
            return bad(format!(
                "decoder has {} stages but the extractor has {}",
                self.decoder_channels.len(),
                self.extractor_channels.len()
            ));
        }
        let all = self
            .extractor_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain([&self.attention_dim, &self.ffn_hidden, &self.estimator_channels]);
        if all.into_iter().any(|&c| c == 0) {
            return bad("channel counts must be positive".into());
        }
        if self.extractor_channels.last() != Some(&self.attention_dim) {
            return bad(format!(
                "attention dim {} must equal the last extractor width {:?}",
                self.attention_dim,
                self.extractor_channels.last()
            ));
        }
        if self.decoder_channels.last() != Some(&3) {
            return bad("decoders must end with 3 channels".into());
        }
        if self.attention_heads == 0 || !self.attention_dim.is_multiple_of(self.attention_heads) {
            return bad(format!(
                "attention dim {} not divisible by {} heads",
                self.attention_dim, self.attention_heads
            ));
        }
        if !self.attention_dim.is_multiple_of(4) {
            return bad(format!(
                "attention dim {} must be divisible by 4 for the 2-D positional encoding",
                self.attention_dim
            ));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.downsample()) {
            return bad(format!(
                "input size {} not divisible by {}",
                self.input_size,
                self.downsample()
            ));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        Ok(())
    }
}
