//! Multi-head cross-attention block with post-norm residuals and a ReLU
//! feed-forward network.
//!
//! Queries come from the content features plus a positional encoding, keys
//! from the light features plus the same encoding, values from the light
//! features alone:
//!
//! ```text
//! Mx = Cat(head_1..head_M) Wc,  head_j = softmax(Q Wq_j (K Wk_j)^T / sqrt(C/M)) V Wv_j
//! My = LN(Mx + content)
//! Z  = LN(FFN(My) + My)
//! ```

use rand::Rng;

use super::{join, LayerNorm, Linear, LnCache, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef, Real, Tensor};

/// Fixed 2-D sinusoidal encoding for an `h x w` grid, row-major, as an
/// `(h*w) x c` matrix. The first half of the channels encodes the row, the
/// second half the column, as interleaved sin/cos pairs.
pub fn positional_encoding<T: Real>(h: usize, w: usize, c: usize) -> Result<Vec<T>> {
    if c == 0 || !c.is_multiple_of(4) {
        return Err(Error::InvalidConfig(format!(
            "positional encoding needs a channel count divisible by 4, got {c}"
        )));
    }
    let half = c / 2;
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for (pos, _) in [(y, 0), (x, 1)] {
                for i in 0..half / 2 {
                    let freq = 10000f64.powf(-2.0 * i as f64 / half as f64);
                    let arg = pos as f64 * freq;
                    out.push(T::lit(arg.sin()));
                    out.push(T::lit(arg.cos()));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CrossAttention<T> {
    heads: usize,
    dim: usize,
    pub w_query: Linear<T>,
    pub w_key: Linear<T>,
    pub w_value: Linear<T>,
    pub w_out: Linear<T>,
    pub norm1: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub norm2: LayerNorm<T>,
}

#[derive(Clone, Debug)]
struct SampleCache<T> {
    q_in: Vec<T>,
    k_in: Vec<T>,
    v_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Row-stochastic attention matrices, one `L x L` block per head.
    attn: Vec<T>,
    heads_out: Vec<T>,
    ln1: LnCache<T>,
    my: Vec<T>,
    hidden: Vec<T>,
    ln2: LnCache<T>,
}

/// Saved activations of a [`CrossAttention::forward`] call.
#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    tokens: usize,
    samples: Vec<SampleCache<T>>,
}

impl<T: Real> AttentionCache<T> {
    /// The `L x L` softmax matrix of one head for one sample.
    pub fn attention(&self, sample: usize, head: usize) -> &[T] {
        let l2 = self.tokens * self.tokens;
        &self.samples[sample].attn[head * l2..(head + 1) * l2]
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }
}

impl<T: Real> CrossAttention<T> {
    pub fn new(dim: usize, heads: usize, ffn_hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!(
                "attention dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(CrossAttention {
            heads,
            dim,
            w_query: Linear::new(dim, dim, false, rng),
            w_key: Linear::new(dim, dim, false, rng),
            w_value: Linear::new(dim, dim, false, rng),
            w_out: Linear::new(dim, dim, false, rng),
            norm1: LayerNorm::new(dim),
            ffn_in: Linear::new(dim, ffn_hidden, true, rng),
            ffn_out: Linear::new(ffn_hidden, dim, true, rng),
            norm2: LayerNorm::new(dim),
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn scale(&self) -> T {
        T::from_usize(self.head_dim()).unwrap().sqrt().recip()
    }

    /// `content` supplies the queries (and the first residual), `light` the
    /// keys and values. Both are `n x h x w x dim`.
    pub fn forward(
        &self,
        content: &Tensor<T>,
        light: &Tensor<T>,
    ) -> Result<(Tensor<T>, AttentionCache<T>)> {
        let s = content.shape();
        if s != light.shape() {
            return Err(Error::shape(format!(
                "cross-attention operands differ: {s} vs {}",
                light.shape()
            )));
        }
        if s.c != self.dim {
            return Err(Error::shape(format!(
                "cross-attention expects {} channels, got {}",
                self.dim, s.c
            )));
        }
        let l = s.pixels();
        let (c, dh) = (self.dim, self.head_dim());
        let pos: Vec<T> = positional_encoding(s.h, s.w, c)?;
        let scale = self.scale();
        let mut out = Tensor::zeros(s);
        let mut samples = Vec::with_capacity(s.n);

        for n in 0..s.n {
            let f2 = content.sample(n);
            let f1 = light.sample(n);
            let q_in: Vec<T> = f2.iter().zip(&pos).map(|(&a, &p)| a + p).collect();
            let k_in: Vec<T> = f1.iter().zip(&pos).map(|(&a, &p)| a + p).collect();
            let v_in = f1.to_vec();
            let q = self.w_query.forward(&q_in, l);
            let k = self.w_key.forward(&k_in, l);
            let v = self.w_value.forward(&v_in, l);

            let mut attn = vec![T::zero(); self.heads * l * l];
            let mut heads_out = vec![T::zero(); l * c];
            for hd in 0..self.heads {
                let a = &mut attn[hd * l * l..(hd + 1) * l * l];
                gemm(
                    scale,
                    MatRef::strided(&q[hd * dh..], l, dh, c, 1),
                    MatRef::strided(&k[hd * dh..], l, dh, c, 1).t(),
                    T::zero(),
                    MatMut::new(a, l, l),
                );
                for row in a.chunks_exact_mut(l) {
                    softmax_in_place(row);
                }
                gemm(
                    T::one(),
                    MatRef::new(a, l, l),
                    MatRef::strided(&v[hd * dh..], l, dh, c, 1),
                    T::zero(),
                    MatMut::strided(&mut heads_out[hd * dh..], l, dh, c, 1),
                );
            }
            let mx = self.w_out.forward(&heads_out, l);
            let r1: Vec<T> = mx.iter().zip(f2).map(|(&a, &b)| a + b).collect();
            let (my, ln1) = self.norm1.forward(&r1);
            let mut hidden = self.ffn_in.forward(&my, l);
            hidden.iter_mut().for_each(|v| *v = v.max(T::zero()));
            let ffn = self.ffn_out.forward(&hidden, l);
            let r2: Vec<T> = ffn.iter().zip(&my).map(|(&a, &b)| a + b).collect();
            let (z, ln2) = self.norm2.forward(&r2);
            out.sample_mut(n).copy_from_slice(&z);
            samples.push(SampleCache {
                q_in,
                k_in,
                v_in,
                q,
                k,
                v,
                attn,
                heads_out,
                ln1,
                my,
                hidden,
                ln2,
            });
        }
        Ok((out, AttentionCache { tokens: l, samples }))
    }

    /// Returns `(d_content, d_light)`.
    pub fn backward(
        &mut self,
        cache: &AttentionCache<T>,
        dz: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let s = dz.shape();
        let l = cache.tokens;
        let (c, dh) = (self.dim, self.head_dim());
        let scale = self.scale();
        let mut d_content = Tensor::zeros(s);
        let mut d_light = Tensor::zeros(s);

        for (n, sc) in cache.samples.iter().enumerate() {
            let dr2 = self.norm2.backward(&sc.ln2, dz.sample(n));
            let mut dhidden = self.ffn_out.backward(&sc.hidden, &dr2, l);
            for (g, &h) in dhidden.iter_mut().zip(&sc.hidden) {
                if h <= T::zero() {
                    *g = T::zero();
                }
            }
            let mut dmy = self.ffn_in.backward(&sc.my, &dhidden, l);
            for (a, &b) in dmy.iter_mut().zip(&dr2) {
                *a += b;
            }
            let dr1 = self.norm1.backward(&sc.ln1, &dmy);
            // residual into the content branch
            let dc = d_content.sample_mut(n);
            for (a, &b) in dc.iter_mut().zip(&dr1) {
                *a += b;
            }
            let dheads = self.w_out.backward(&sc.heads_out, &dr1, l);

            let mut dq = vec![T::zero(); l * c];
            let mut dk = vec![T::zero(); l * c];
            let mut dv = vec![T::zero(); l * c];
            let mut da = vec![T::zero(); l * l];
            for hd in 0..self.heads {
                let a = &sc.attn[hd * l * l..(hd + 1) * l * l];
                let dout_h = MatRef::strided(&dheads[hd * dh..], l, dh, c, 1);
                // dV_h = A^T dO_h
                gemm(
                    T::one(),
                    MatRef::new(a, l, l).t(),
                    dout_h,
                    T::zero(),
                    MatMut::strided(&mut dv[hd * dh..], l, dh, c, 1),
                );
                // dA = dO_h V_h^T
                gemm(
                    T::one(),
                    dout_h,
                    MatRef::strided(&sc.v[hd * dh..], l, dh, c, 1).t(),
                    T::zero(),
                    MatMut::new(&mut da, l, l),
                );
                // softmax backward, row by row; da becomes dS
                for (drow, arow) in da.chunks_exact_mut(l).zip(a.chunks_exact(l)) {
                    let dot: T = drow.iter().zip(arow).map(|(&g, &p)| g * p).sum();
                    for (g, &p) in drow.iter_mut().zip(arow) {
                        *g = p * (*g - dot);
                    }
                }
                gemm(
                    scale,
                    MatRef::new(&da, l, l),
                    MatRef::strided(&sc.k[hd * dh..], l, dh, c, 1),
                    T::zero(),
                    MatMut::strided(&mut dq[hd * dh..], l, dh, c, 1),
                );
                gemm(
                    scale,
                    MatRef::new(&da, l, l).t(),
                    MatRef::strided(&sc.q[hd * dh..], l, dh, c, 1),
                    T::zero(),
                    MatMut::strided(&mut dk[hd * dh..], l, dh, c, 1),
                );
            }
            let dq_in = self.w_query.backward(&sc.q_in, &dq, l);
            let dk_in = self.w_key.backward(&sc.k_in, &dk, l);
            let dv_in = self.w_value.backward(&sc.v_in, &dv, l);
            let dc = d_content.sample_mut(n);
            for (a, &b) in dc.iter_mut().zip(&dq_in) {
                *a += b;
            }
            let dl = d_light.sample_mut(n);
            for ((a, &b), &v) in dl.iter_mut().zip(&dk_in).zip(&dv_in) {
                *a += b + v;
            }
        }
        (d_content, d_light)
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

impl<T: Real> Module<T> for CrossAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.w_query.visit(&join(prefix, "w_query"), f);
        self.w_key.visit(&join(prefix, "w_key"), f);
        self.w_value.visit(&join(prefix, "w_value"), f);
        self.w_out.visit(&join(prefix, "w_out"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.w_query.visit_mut(&join(prefix, "w_query"), f);
        self.w_key.visit_mut(&join(prefix, "w_key"), f);
        self.w_value.visit_mut(&join(prefix, "w_value"), f);
        self.w_out.visit_mut(&join(prefix, "w_out"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}
