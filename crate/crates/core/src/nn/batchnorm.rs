use super::{join, Mode, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `n x h x w`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
}

/// What [`BatchNorm2d::backward`] needs from the forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    /// Unbiased batch variance, used to update the running estimate.
    batch_var: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(vec![channels], vec![T::one(); channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: Param::buffer(vec![channels], vec![T::zero(); channels]),
            running_var: Param::buffer(vec![channels], vec![T::one(); channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
        let c = self.channels();
        if x.shape().c != c {
            return Err(Error::shape(format!(
                "batch norm over {c} channels got {}",
                x.shape()
            )));
        }
        let count = x.shape().n * x.shape().pixels();
        let (mean, var_biased, var_unbiased) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::shape(format!(
                        "batch statistics need at least two values per channel, got {}",
                        x.shape()
                    )));
                }
                let mut mean = vec![T::zero(); c];
                for px in x.data().chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(px) {
                        *m += v;
                    }
                }
                let cnt = T::from_usize(count).unwrap();
                mean.iter_mut().for_each(|m| *m = *m / cnt);
                let mut var = vec![T::zero(); c];
                for px in x.data().chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let unbiased = var
                    .iter()
                    .map(|&s| s / T::from_usize(count - 1).unwrap())
                    .collect();
                let biased = var.iter().map(|&s| s / cnt).collect();
                (mean, biased, unbiased)
            }
            Mode::Eval => (
                self.running_mean.value.clone(),
                self.running_var.value.clone(),
                self.running_var.value.clone(),
            ),
        };
        let eps = T::lit(EPS);
        let inv_std: Vec<T> = var_biased.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let mut xhat = x.clone();
        for px in xhat.data_mut().chunks_exact_mut(c) {
            for ((v, &m), &is) in px.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * is;
            }
        }
        let mut y = xhat.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for ((v, &g), &b) in px.iter_mut().zip(&self.gamma.value).zip(&self.beta.value) {
                *v = *v * g + b;
            }
        }
        Ok((
            y,
            BnCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var_unbiased,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let c = self.channels();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (g, xh) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for k in 0..c {
                sum_dy[k] += g[k];
                sum_dy_xhat[k] += g[k] * xh[k];
            }
        }
        for k in 0..c {
            self.gamma.grad[k] += sum_dy_xhat[k];
            self.beta.grad[k] += sum_dy[k];
        }
        let mut dx = dy.clone();
        match cache.mode {
            Mode::Train => {
                let cnt = T::from_usize(dy.shape().n * dy.shape().pixels()).unwrap();
                for (g, xh) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
                    for k in 0..c {
                        let scale = self.gamma.value[k] * cache.inv_std[k] / cnt;
                        g[k] = scale * (cnt * g[k] - sum_dy[k] - xh[k] * sum_dy_xhat[k]);
                    }
                }
            }
            Mode::Eval => {
                for g in dx.data_mut().chunks_exact_mut(c) {
                    for k in 0..c {
                        g[k] = g[k] * self.gamma.value[k] * cache.inv_std[k];
                    }
                }
            }
        }
        dx
    }

    /// Fold the batch statistics of a training-mode forward pass into the
    /// running estimates.
    pub fn update_running_stats(&mut self, cache: &BnCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = T::lit(MOMENTUM);
        let keep = T::one() - m;
        for k in 0..self.channels() {
            self.running_mean.value[k] = keep * self.running_mean.value[k] + m * cache.batch_mean[k];
            self.running_var.value[k] = keep * self.running_var.value[k] + m * cache.batch_var[k];
        }
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
