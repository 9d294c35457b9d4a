//! The convolutional building blocks: the stride-2 encoder, the stride-2
//! decoder used for both light generation and content deconvolution, and
//! the parameter estimation head.

use rand::Rng;

use crate::error::Result;
use crate::nn::{
    join, relu, relu_backward, tanh, tanh_backward, BatchNorm2d, BnCache, Conv2d,
    ConvTranspose2d, Mode, Module, Param,
};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
struct StageCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    output: Tensor<T>,
}

/// Saved activations of an encoder or decoder stack.
#[derive(Clone, Debug)]
pub struct StackCache<T> {
    stages: Vec<StageCache<T>>,
}

impl<T: Real> StackCache<T> {
    /// Output of every stage in order; the last one is the stack output.
    pub fn outputs(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.stages.iter().map(|s| &s.output)
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.stages.last().expect("non-empty stack").output
    }
}

/// Convolution, batch normalisation, ReLU.
#[derive(Clone, Debug)]
struct Cnr<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

/// Transposed convolution, batch normalisation, ReLU.
#[derive(Clone, Debug)]
struct Dcnr<T> {
    deconv: ConvTranspose2d<T>,
    bn: BatchNorm2d<T>,
}

/// Four (by default) stride-2 CNR stages: `H x W x 3 -> H/16 x W/16 x C`.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    stages: Vec<Cnr<T>>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(channels: &[usize], rng: &mut impl Rng) -> Self {
        let mut c_in = 3;
        let stages = channels
            .iter()
            .map(|&c_out| {
                let s = Cnr {
                    conv: Conv2d::new(c_in, c_out, 2, 2, 0, rng),
                    bn: BatchNorm2d::new(c_out),
                };
                c_in = c_out;
                s
            })
            .collect();
        FeatureExtractor { stages }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<StackCache<T>> {
        let mut input = x.clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let pre = s.conv.forward(&input)?;
            let (normed, bn) = s.bn.forward(&pre, mode)?;
            let output = relu(&normed);
            stages.push(StageCache {
                input: std::mem::replace(&mut input, output.clone()),
                bn,
                output,
            });
        }
        Ok(StackCache { stages })
    }

    pub fn backward(&mut self, cache: &StackCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grad = dy.clone();
        for (s, c) in self.stages.iter_mut().zip(&cache.stages).rev() {
            let d_norm = relu_backward(&c.output, &grad);
            let d_pre = s.bn.backward(&c.bn, &d_norm);
            grad = s.conv.backward(&c.input, &d_pre)?;
        }
        Ok(grad)
    }

    pub fn update_running_stats(&mut self, cache: &StackCache<T>) {
        for (s, c) in self.stages.iter_mut().zip(&cache.stages) {
            s.bn.update_running_stats(&c.bn);
        }
    }
}

/// Stride-2 DCNR stages, each doubling the spatial size.
#[derive(Clone, Debug)]
pub struct Decoder<T> {
    stages: Vec<Dcnr<T>>,
}

impl<T: Real> Decoder<T> {
    pub fn new(c_in: usize, channels: &[usize], rng: &mut impl Rng) -> Self {
        let mut c_prev = c_in;
        let stages = channels
            .iter()
            .map(|&c_out| {
                let s = Dcnr {
                    deconv: ConvTranspose2d::new(c_prev, c_out, 2, rng),
                    bn: BatchNorm2d::new(c_out),
                };
                c_prev = c_out;
                s
            })
            .collect();
        Decoder { stages }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<StackCache<T>> {
        let mut input = x.clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let pre = s.deconv.forward(&input)?;
            let (normed, bn) = s.bn.forward(&pre, mode)?;
            let output = relu(&normed);
            stages.push(StageCache {
                input: std::mem::replace(&mut input, output.clone()),
                bn,
                output,
            });
        }
        Ok(StackCache { stages })
    }

    pub fn backward(&mut self, cache: &StackCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grad = dy.clone();
        for (s, c) in self.stages.iter_mut().zip(&cache.stages).rev() {
            let d_norm = relu_backward(&c.output, &grad);
            let d_pre = s.bn.backward(&c.bn, &d_norm);
            grad = s.deconv.backward(&c.input, &d_pre)?;
        }
        Ok(grad)
    }

    pub fn update_running_stats(&mut self, cache: &StackCache<T>) {
        for (s, c) in self.stages.iter_mut().zip(&cache.stages) {
            s.bn.update_running_stats(&c.bn);
        }
    }
}

/// Saved activations of a parameter estimation head.
#[derive(Clone, Debug)]
pub struct EstimatorCache<T> {
    input: Tensor<T>,
    c1: Tensor<T>,
    c2: Tensor<T>,
    c3: Tensor<T>,
    cat32: Tensor<T>,
    c4: Tensor<T>,
    cat41: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Real> EstimatorCache<T> {
    /// `Conv1..Conv4`, the two concatenations and the output map, in order.
    pub fn stages(&self) -> [&Tensor<T>; 7] {
        [
            &self.c1,
            &self.c2,
            &self.c3,
            &self.cat32,
            &self.c4,
            &self.cat41,
            &self.output,
        ]
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

/// Five 3x3 convolutions with two skip concatenations and a tanh output:
///
/// ```text
/// c1 = relu(conv1(x));   c2 = relu(conv2(c1));   c3 = relu(conv3(c2))
/// c4 = relu(conv4([c3, c2]));   out = tanh(conv5([c4, c1]))
/// ```
#[derive(Clone, Debug)]
pub struct Estimator<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    conv3: Conv2d<T>,
    conv4: Conv2d<T>,
    conv_out: Conv2d<T>,
    width: usize,
}

impl<T: Real> Estimator<T> {
    pub fn new(c_in: usize, width: usize, rng: &mut impl Rng) -> Self {
        Estimator {
            conv1: Conv2d::new(c_in, width, 3, 1, 1, rng),
            conv2: Conv2d::new(width, width, 3, 1, 1, rng),
            conv3: Conv2d::new(width, width, 3, 1, 1, rng),
            conv4: Conv2d::new(2 * width, width, 3, 1, 1, rng),
            conv_out: Conv2d::new(2 * width, c_in, 3, 1, 1, rng),
            width,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<EstimatorCache<T>> {
        let c1 = relu(&self.conv1.forward(x)?);
        let c2 = relu(&self.conv2.forward(&c1)?);
        let c3 = relu(&self.conv3.forward(&c2)?);
        let cat32 = c3.concat_channels(&c2)?;
        let c4 = relu(&self.conv4.forward(&cat32)?);
        let cat41 = c4.concat_channels(&c1)?;
        let output = tanh(&self.conv_out.forward(&cat41)?);
        Ok(EstimatorCache {
            input: x.clone(),
            c1,
            c2,
            c3,
            cat32,
            c4,
            cat41,
            output,
        })
    }

    pub fn backward(&mut self, cache: &EstimatorCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.width;
        let d_out = tanh_backward(&cache.output, dy);
        let d_cat41 = self.conv_out.backward(&cache.cat41, &d_out)?;
        let (d_c4, mut d_c1) = d_cat41.split_channels(w);
        let d_c4 = relu_backward(&cache.c4, &d_c4);
        let d_cat32 = self.conv4.backward(&cache.cat32, &d_c4)?;
        let (d_c3, mut d_c2) = d_cat32.split_channels(w);
        let d_c3 = relu_backward(&cache.c3, &d_c3);
        d_c2.add_assign(&self.conv3.backward(&cache.c2, &d_c3)?);
        let d_c2 = relu_backward(&cache.c2, &d_c2);
        d_c1.add_assign(&self.conv2.backward(&cache.c1, &d_c2)?);
        let d_c1 = relu_backward(&cache.c1, &d_c1);
        self.conv1.backward(&cache.input, &d_c1)
    }
}

impl<T: Real> Module<T> for FeatureExtractor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{}", i + 1));
            s.conv.visit(&join(&p, "conv"), f);
            s.bn.visit(&join(&p, "bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{}", i + 1));
            s.conv.visit_mut(&join(&p, "conv"), f);
            s.bn.visit_mut(&join(&p, "bn"), f);
        }
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{}", i + 1));
            s.deconv.visit(&join(&p, "deconv"), f);
            s.bn.visit(&join(&p, "bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{}", i + 1));
            s.deconv.visit_mut(&join(&p, "deconv"), f);
            s.bn.visit_mut(&join(&p, "bn"), f);
        }
    }
}

impl<T: Real> Module<T> for Estimator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.conv4.visit(&join(prefix, "conv4"), f);
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.conv4.visit_mut(&join(prefix, "conv4"), f);
        self.conv_out.visit_mut(&join(prefix, "conv_out"), f);
    }
}
