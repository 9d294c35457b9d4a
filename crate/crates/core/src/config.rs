//! The application config file: one section per component.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::losses::LossWeights;
use crate::network::NetworkConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub eval: EvalConfig,
}

impl AppConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Apply `section.key=value`. The value is parsed as JSON when possible
    /// and taken as a string otherwise. Unknown keys and ill-typed values
    /// are rejected.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown config key {key:?}")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(root)
            .map_err(|e| Error::InvalidConfig(format!("override {key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.train.input_size != self.network.input_size {
            return Err(Error::InvalidConfig(format!(
                "train.input_size {} differs from network.input_size {}",
                self.train.input_size, self.network.input_size
            )));
        }
        let s = self.train.input_size;
        for r in [self.loss.region_size, self.loss.spa_region_size] {
            if !s.is_multiple_of(r) {
                return Err(Error::InvalidConfig(format!(
                    "loss region size {r} does not tile {s}x{s} images"
                )));
            }
        }
        Ok(())
    }
}
