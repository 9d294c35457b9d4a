use super::{join, Module, Param};
use crate::tensor::Real;

const EPS: f64 = 1e-5;

/// Layer normalisation over the channel axis of a `tokens x channels` matrix.
#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

#[derive(Clone, Debug)]
pub struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(channels: usize) -> Self {
        LayerNorm {
            gamma: Param::new(vec![channels], vec![T::one(); channels]),
            beta: Param::zeros(vec![channels]),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LnCache<T>) {
        let c = self.gamma.len();
        let cf = T::from_usize(c).unwrap();
        let eps = T::lit(EPS);
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.len() / c);
        for tok in x.chunks_exact(c) {
            let mean = tok.iter().copied().sum::<T>() / cf;
            let var = tok.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            xhat.extend(tok.iter().map(|&v| (v - mean) * is));
        }
        let y = xhat
            .chunks_exact(c)
            .flat_map(|tok| {
                tok.iter()
                    .zip(&self.gamma.value)
                    .zip(&self.beta.value)
                    .map(|((&v, &g), &b)| v * g + b)
            })
            .collect();
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LnCache<T>, dy: &[T]) -> Vec<T> {
        let c = self.gamma.len();
        let cf = T::from_usize(c).unwrap();
        let mut dx = Vec::with_capacity(dy.len());
        let mut dxhat = vec![T::zero(); c];
        for ((g, xh), &is) in dy
            .chunks_exact(c)
            .zip(cache.xhat.chunks_exact(c))
            .zip(&cache.inv_std)
        {
            let mut sum = T::zero();
            let mut sum_x = T::zero();
            for k in 0..c {
                self.gamma.grad[k] += g[k] * xh[k];
                self.beta.grad[k] += g[k];
                dxhat[k] = g[k] * self.gamma.value[k];
                sum += dxhat[k];
                sum_x += dxhat[k] * xh[k];
            }
            for k in 0..c {
                dx.push(is / cf * (cf * dxhat[k] - sum - xh[k] * sum_x));
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
