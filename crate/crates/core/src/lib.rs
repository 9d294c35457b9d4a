//! Low-light image enhancement with light distribution suppression.
//!
//! The crate covers the network and its hand-written backward pass, the
//! smooth light label used to supervise it, the interweave pixel adjustment,
//! the unsupervised training losses, a training loop, and one-pass tracking
//! evaluation metrics used to score enhancers downstream.

pub mod adjust;
pub mod config;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod label;
pub mod losses;
pub mod network;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
