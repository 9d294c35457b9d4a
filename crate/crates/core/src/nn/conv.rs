use rand::Rng;

use super::{join, Module, Param, INIT_STD};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef, Real, Shape, Tensor};

/// Upper bound on the im2col scratch buffer, in elements.
const CHUNK_ELEMS: usize = 1 << 16;

/// 2-D convolution over NHWC tensors.
///
/// Weights are stored `[k, k, c_in, c_out]` so that the weight array is the
/// `(k*k*c_in) x c_out` matrix multiplied against im2col patches. Output rows
/// are processed in chunks to bound scratch memory.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
    c_in: usize,
    c_out: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Conv2d {
            weight: Param::normal(vec![kernel, kernel, c_in, c_out], INIT_STD, rng),
            bias: Param::zeros(vec![c_out]),
            kernel,
            stride,
            padding,
            c_in,
            c_out,
        }
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in, input.c
            )));
        }
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if input.h + 2 * p < k || input.w + 2 * p < k {
            return Err(Error::shape(format!(
                "input {input} smaller than {k}x{k} kernel"
            )));
        }
        Ok(Shape::new(
            input.n,
            (input.h + 2 * p - k) / s + 1,
            (input.w + 2 * p - k) / s + 1,
            self.c_out,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.c_in
    }

    fn rows_per_chunk(&self, ow: usize) -> usize {
        (CHUNK_ELEMS / (ow * self.patch_len()).max(1)).max(1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let in_shape = x.shape();
        let (oh, ow) = (out_shape.h, out_shape.w);
        let kk = self.patch_len();
        let cout = self.c_out;
        let mut y = Tensor::zeros(out_shape);
        for px in y.data_mut().chunks_exact_mut(cout) {
            px.copy_from_slice(&self.bias.value);
        }
        let w = MatRef::new(&self.weight.value, kk, cout);

        if self.is_pointwise() {
            for n in 0..in_shape.n {
                let rows = in_shape.pixels();
                let xs = MatRef::new(x.sample(n), rows, kk);
                gemm(T::one(), xs, w, T::one(), MatMut::new(y.sample_mut(n), rows, cout));
            }
            return Ok(y);
        }

        let chunk = self.rows_per_chunk(ow);
        let mut cols = vec![T::zero(); chunk * ow * kk];
        for n in 0..in_shape.n {
            let xs = x.sample(n);
            let ys = y.sample_mut(n);
            let mut oy0 = 0;
            while oy0 < oh {
                let oy1 = (oy0 + chunk).min(oh);
                let rows = (oy1 - oy0) * ow;
                self.im2col(xs, in_shape, oy0, oy1, ow, &mut cols[..rows * kk]);
                gemm(
                    T::one(),
                    MatRef::new(&cols[..rows * kk], rows, kk),
                    w,
                    T::one(),
                    MatMut::new(&mut ys[oy0 * ow * cout..oy1 * ow * cout], rows, cout),
                );
                oy0 = oy1;
            }
        }
        Ok(y)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        dy.expect_shape(out_shape, "conv backward")?;
        let in_shape = x.shape();
        let (oh, ow) = (out_shape.h, out_shape.w);
        let kk = self.patch_len();
        let cout = self.c_out;
        let mut dx = Tensor::zeros(in_shape);

        for g in dy.data().chunks_exact(cout) {
            for (b, &v) in self.bias.grad.iter_mut().zip(g) {
                *b += v;
            }
        }

        if self.is_pointwise() {
            for n in 0..in_shape.n {
                let rows = in_shape.pixels();
                let xs = MatRef::new(x.sample(n), rows, kk);
                let dys = MatRef::new(dy.sample(n), rows, cout);
                gemm(
                    T::one(),
                    xs.t(),
                    dys,
                    T::one(),
                    MatMut::new(&mut self.weight.grad, kk, cout),
                );
                gemm(
                    T::one(),
                    dys,
                    MatRef::new(&self.weight.value, kk, cout).t(),
                    T::zero(),
                    MatMut::new(dx.sample_mut(n), rows, kk),
                );
            }
            return Ok(dx);
        }

        let chunk = self.rows_per_chunk(ow);
        let mut cols = vec![T::zero(); chunk * ow * kk];
        let mut dcols = vec![T::zero(); chunk * ow * kk];
        for n in 0..in_shape.n {
            let xs = x.sample(n);
            let dys = dy.sample(n);
            let mut oy0 = 0;
            while oy0 < oh {
                let oy1 = (oy0 + chunk).min(oh);
                let rows = (oy1 - oy0) * ow;
                let cols = &mut cols[..rows * kk];
                let dcols = &mut dcols[..rows * kk];
                self.im2col(xs, in_shape, oy0, oy1, ow, cols);
                let dy_chunk = MatRef::new(&dys[oy0 * ow * cout..oy1 * ow * cout], rows, cout);
                gemm(
                    T::one(),
                    MatRef::new(cols, rows, kk).t(),
                    dy_chunk,
                    T::one(),
                    MatMut::new(&mut self.weight.grad, kk, cout),
                );
                gemm(
                    T::one(),
                    dy_chunk,
                    MatRef::new(&self.weight.value, kk, cout).t(),
                    T::zero(),
                    MatMut::new(dcols, rows, kk),
                );
                self.col2im(dcols, in_shape, oy0, oy1, ow, dx.sample_mut(n));
                oy0 = oy1;
            }
        }
        Ok(dx)
    }

    fn im2col(&self, xs: &[T], s: Shape, oy0: usize, oy1: usize, ow: usize, cols: &mut [T]) {
        let (k, st, p, cin) = (self.kernel, self.stride, self.padding, self.c_in);
        let kk = self.patch_len();
        for oy in oy0..oy1 {
            for ox in 0..ow {
                let row = &mut cols[((oy - oy0) * ow + ox) * kk..][..kk];
                for ky in 0..k {
                    let iy = (oy * st + ky) as isize - p as isize;
                    for kx in 0..k {
                        let ix = (ox * st + kx) as isize - p as isize;
                        let dst = &mut row[(ky * k + kx) * cin..][..cin];
                        if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                            let src = ((iy as usize) * s.w + ix as usize) * cin;
                            dst.copy_from_slice(&xs[src..src + cin]);
                        } else {
                            dst.fill(T::zero());
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, dcols: &[T], s: Shape, oy0: usize, oy1: usize, ow: usize, dxs: &mut [T]) {
        let (k, st, p, cin) = (self.kernel, self.stride, self.padding, self.c_in);
        let kk = self.patch_len();
        for oy in oy0..oy1 {
            for ox in 0..ow {
                let row = &dcols[((oy - oy0) * ow + ox) * kk..][..kk];
                for ky in 0..k {
                    let iy = (oy * st + ky) as isize - p as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * st + kx) as isize - p as isize;
                        if ix < 0 || ix as usize >= s.w {
                            continue;
                        }
                        let dst = ((iy as usize) * s.w + ix as usize) * cin;
                        let src = &row[(ky * k + kx) * cin..][..cin];
                        for (d, &v) in dxs[dst..dst + cin].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
