use rand::Rng;

use super::{join, Module, Param, INIT_STD};
use crate::tensor::{gemm, MatMut, MatRef, Real};

/// Fully connected layer acting on the rows of a `rows x in` matrix.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    d_in: usize,
    d_out: usize,
}

impl<T: Real> Linear<T> {
    pub fn new(d_in: usize, d_out: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::normal(vec![d_in, d_out], INIT_STD, rng),
            bias: with_bias.then(|| Param::zeros(vec![d_out])),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut y = match &self.bias {
            Some(b) => b.value.repeat(rows),
            None => vec![T::zero(); rows * self.d_out],
        };
        gemm(
            T::one(),
            MatRef::new(x, rows, self.d_in),
            MatRef::new(&self.weight.value, self.d_in, self.d_out),
            T::one(),
            MatMut::new(&mut y, rows, self.d_out),
        );
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
        let dym = MatRef::new(dy, rows, self.d_out);
        gemm(
            T::one(),
            MatRef::new(x, rows, self.d_in).t(),
            dym,
            T::one(),
            MatMut::new(&mut self.weight.grad, self.d_in, self.d_out),
        );
        if let Some(b) = &mut self.bias {
            for g in dy.chunks_exact(self.d_out) {
                for (acc, &v) in b.grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        let mut dx = vec![T::zero(); rows * self.d_in];
        gemm(
            T::one(),
            dym,
            MatRef::new(&self.weight.value, self.d_in, self.d_out).t(),
            T::zero(),
            MatMut::new(&mut dx, rows, self.d_in),
        );
        dx
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
