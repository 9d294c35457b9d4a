//! Inference: network forward in evaluation mode followed by the
//! interweave adjustment.

use std::path::Path;

use crate::adjust::{interweave_adjust, AdjustmentTrace};
use crate::error::Result;
use crate::image_io::{crop, pad_to_multiple};
use crate::network::{Network, NetworkConfig, WeightArchive};
use crate::nn::Mode;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Enhancer {
    net: Network<f32>,
    iterations: usize,
}

impl Enhancer {
    pub fn new(net: Network<f32>) -> Self {
        let iterations = net.config().iterations;
        Enhancer { net, iterations }
    }

    pub fn from_weights(config: NetworkConfig, weights: impl AsRef<Path>) -> Result<Self> {
        let mut net = Network::new(config)?;
        net.load_archive(&WeightArchive::load(weights)?)?;
        Ok(Self::new(net))
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    /// Enhance a batch of any size. Sides that are not multiples of the
    /// network's downsampling factor are edge-padded, and every frame of
    /// the returned trace is cropped back to the input size.
    pub fn enhance(&self, image: &Tensor<f32>) -> Result<AdjustmentTrace<f32>> {
        let s = image.shape();
        let padded = pad_to_multiple(image, self.net.config().downsample());
        let (out, _) = self.net.forward(&padded, Mode::Eval)?;
        let mut trace = interweave_adjust(
            &padded,
            &out.suppression.data,
            &out.enhancement.data,
            self.iterations,
        )?;
        if padded.shape() != s {
            for f in &mut trace.frames {
                *f = crop(f, s.h, s.w);
            }
            trace.difference = crop(&trace.difference, s.h, s.w);
        }
        Ok(trace)
    }
}
