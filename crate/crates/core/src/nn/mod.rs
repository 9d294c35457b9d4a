//! Layers with hand-written backward passes.
//!
//! Every layer owns its [`Param`]s and exposes a pure `forward` that returns
//! whatever the matching `backward` needs. `backward` accumulates parameter
//! gradients into `Param::grad` and returns the gradient of its input.
//! Batch normalisation never mutates running statistics during `forward`;
//! the caller commits them explicitly so that forward passes stay pure.

mod act;
mod attention;
mod batchnorm;
mod conv;
mod deconv;
mod layernorm;
mod linear;

pub use act::{relu, relu_backward, tanh, tanh_backward};
pub use attention::{positional_encoding, AttentionCache, CrossAttention};
pub use batchnorm::{BatchNorm2d, BnCache};
pub use conv::Conv2d;
pub use deconv::ConvTranspose2d;
pub use layernorm::{LayerNorm, LnCache};
pub use linear::Linear;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Real;

/// Standard deviation of the zero-mean normal used for weight init.
pub const INIT_STD: f64 = 0.02;

/// Whether batch normalisation uses batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named array of weights with its accumulated gradient.
///
/// Buffers (batch-norm running statistics) are `Param`s with
/// `trainable == false` and an empty gradient; they are saved with the
/// weights but never touched by the optimiser.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(dims: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Param {
            dims,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(dims: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), value.len());
        Param {
            dims,
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self::new(dims, vec![T::zero(); len])
    }

    pub fn normal(dims: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let len: usize = dims.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let value = (0..len).map(|_| T::lit(dist.sample(rng))).collect();
        Self::new(dims, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything holding named parameters.
pub trait Module<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    /// Number of trainable scalars.
    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
