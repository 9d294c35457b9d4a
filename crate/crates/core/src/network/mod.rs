//! The enhancement network: encoder, light/content decomposition, light
//! generation, cross-attention content refinement and the two parameter
//! estimation heads.

mod archive;
mod blocks;
mod config;
mod model;

pub use archive::{ArchiveEntry, WeightArchive};
pub use blocks::{Decoder, Estimator, EstimatorCache, FeatureExtractor, StackCache};
pub use config::NetworkConfig;
pub use model::{ForwardOutput, MapKind, Network, OutputGrads, ParameterMap, Stage, Tape};
