use rand::Rng;

use super::{join, Module, Param, INIT_STD};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef, Real, Shape, Tensor};

/// Transposed convolution whose kernel equals its stride (no padding), so
/// every input pixel expands into its own non-overlapping `k x k` block.
///
/// Weights are `[c_in, k, k, c_out]`: the `c_in x (k*k*c_out)` matrix maps
/// one input pixel to its whole output block.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    kernel: usize,
    c_in: usize,
    c_out: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        ConvTranspose2d {
            weight: Param::normal(vec![c_in, kernel, kernel, c_out], INIT_STD, rng),
            bias: Param::zeros(vec![c_out]),
            kernel,
            c_in,
            c_out,
        }
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.c_in {
            return Err(Error::shape(format!(
                "deconv expects {} input channels, got {}",
                self.c_in, input.c
            )));
        }
        Ok(Shape::new(
            input.n,
            input.h * self.kernel,
            input.w * self.kernel,
            self.c_out,
        ))
    }

    fn block_len(&self) -> usize {
        self.kernel * self.kernel * self.c_out
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let s = x.shape();
        let (k, cout, bl) = (self.kernel, self.c_out, self.block_len());
        let mut z = vec![T::zero(); s.pixels() * bl];
        let mut y = Tensor::zeros(out_shape);
        let ow = out_shape.w;
        for n in 0..s.n {
            gemm(
                T::one(),
                MatRef::new(x.sample(n), s.pixels(), self.c_in),
                MatRef::new(&self.weight.value, self.c_in, bl),
                T::zero(),
                MatMut::new(&mut z, s.pixels(), bl),
            );
            let ys = y.sample_mut(n);
            for i in 0..s.h {
                for j in 0..s.w {
                    let block = &z[(i * s.w + j) * bl..][..bl];
                    for a in 0..k {
                        for b in 0..k {
                            let dst = ((i * k + a) * ow + j * k + b) * cout;
                            let src = &block[(a * k + b) * cout..][..cout];
                            for ((d, &v), &bias) in
                                ys[dst..dst + cout].iter_mut().zip(src).zip(&self.bias.value)
                            {
                                *d = v + bias;
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        dy.expect_shape(out_shape, "deconv backward")?;
        let s = x.shape();
        let (k, cout, bl) = (self.kernel, self.c_out, self.block_len());
        let ow = out_shape.w;

        for g in dy.data().chunks_exact(cout) {
            for (b, &v) in self.bias.grad.iter_mut().zip(g) {
                *b += v;
            }
        }

        let mut dz = vec![T::zero(); s.pixels() * bl];
        let mut dx = Tensor::zeros(s);
        for n in 0..s.n {
            let dys = dy.sample(n);
            for i in 0..s.h {
                for j in 0..s.w {
                    let block = &mut dz[(i * s.w + j) * bl..][..bl];
                    for a in 0..k {
                        for b in 0..k {
                            let src = ((i * k + a) * ow + j * k + b) * cout;
                            block[(a * k + b) * cout..][..cout]
                                .copy_from_slice(&dys[src..src + cout]);
                        }
                    }
                }
            }
            let dzm = MatRef::new(&dz, s.pixels(), bl);
            gemm(
                T::one(),
                MatRef::new(x.sample(n), s.pixels(), self.c_in).t(),
                dzm,
                T::one(),
                MatMut::new(&mut self.weight.grad, self.c_in, bl),
            );
            gemm(
                T::one(),
                dzm,
                MatRef::new(&self.weight.value, self.c_in, bl).t(),
                T::zero(),
                MatMut::new(dx.sample_mut(n), s.pixels(), self.c_in),
            );
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for ConvTranspose2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
