//! Unsupervised training losses and their gradients.
//!
//! Every loss accepts a batch and returns the mean of the per-sample values.
//! Each `*_grad` function returns the gradient of that batch value with
//! respect to its first argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Loss coefficients and loss-specific constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub spa: f64,
    pub col: f64,
    pub tv: f64,
    pub ie: f64,
    pub light: f64,
    /// Target exposure level `K`.
    pub exposure_level: f64,
    pub alpha: f64,
    /// Side of the regions averaged by the exposure loss.
    pub region_size: usize,
    /// Side of the regions compared by the spatial consistency loss.
    pub spa_region_size: usize,
    pub smoothl1_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            spa: 10.0,
            col: 5.0,
            tv: 1.0,
            ie: 10.0,
            light: 1.0,
            exposure_level: 0.6,
            alpha: 1.0,
            region_size: 16,
            spa_region_size: 4,
            smoothl1_beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [self.spa, self.col, self.tv, self.ie, self.light];
        if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidConfig("loss coefficients must be non-negative".into()));
        }
        if !(self.exposure_level > 0.0 && self.exposure_level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "exposure level {} must lie in (0, 1)",
                self.exposure_level
            )));
        }
        if !(self.alpha > 0.0 && self.smoothl1_beta > 0.0) {
            return Err(Error::InvalidConfig("alpha and smoothl1_beta must be positive".into()));
        }
        if self.region_size == 0 || self.spa_region_size == 0 {
            return Err(Error::InvalidConfig("region sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Per-part losses and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub spa: f64,
    pub col: f64,
    pub tv: f64,
    pub ie: f64,
    pub light: f64,
    pub total: f64,
}

impl LossReport {
    pub fn parts(&self) -> [f64; 5] {
        [self.spa, self.col, self.tv, self.ie, self.light]
    }
}

/// Combine the five parts with the configured coefficients.
pub fn loss_total(parts: [f64; 5], w: &LossWeights) -> Result<LossReport> {
    if let Some(p) = parts.iter().find(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("loss part {p}")));
    }
    let [spa, col, tv, ie, light] = parts;
    Ok(LossReport {
        spa,
        col,
        tv,
        ie,
        light,
        total: w.spa * spa + w.col * col + w.tv * tv + w.ie * ie + w.light * light,
    })
}

pub fn smooth_l1<T: Real>(x: T, beta: T) -> T {
    let a = x.abs();
    if a < beta {
        T::lit(0.5) * x * x / beta
    } else {
        a - T::lit(0.5) * beta
    }
}

pub fn smooth_l1_grad<T: Real>(x: T, beta: T) -> T {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

fn region_grid<T: Real>(t: &Tensor<T>, r: usize) -> Result<(usize, usize)> {
    let s = t.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::NotDivisible {
            h: s.h,
            w: s.w,
            divisor: r,
        });
    }
    Ok((s.h / r, s.w / r))
}

/// Means of the channel-averaged image over `r x r` regions, per sample.
fn region_means<T: Real>(t: &Tensor<T>, r: usize) -> Result<Vec<Vec<T>>> {
    let (gh, gw) = region_grid(t, r)?;
    let s = t.shape();
    let scale = T::lit(1.0 / (r * r * s.c) as f64);
    Ok((0..s.n)
        .map(|n| {
            let mut m = vec![T::zero(); gh * gw];
            let d = t.sample(n);
            for y in 0..s.h {
                for x in 0..s.w {
                    let px = &d[(y * s.w + x) * s.c..][..s.c];
                    let sum = px.iter().fold(T::zero(), |a, &b| a + b);
                    m[(y / r) * gw + x / r] += sum;
                }
            }
            m.iter_mut().for_each(|v| *v *= scale);
            m
        })
        .collect())
}

/// Spread per-region gradients back to pixels (inverse of `region_means`).
fn spread_regions<T: Real>(shape_of: &Tensor<T>, r: usize, g: &[Vec<T>]) -> Tensor<T> {
    let s = shape_of.shape();
    let gw = s.w / r;
    let scale = T::lit(1.0 / (r * r * s.c) as f64);
    Tensor::from_fn(s, |n, y, x, _| g[n][(y / r) * gw + x / r] * scale)
}

fn neighbours(i: usize, gh: usize, gw: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (i / gw, i % gw);
    [
        (y > 0).then(|| i - gw),
        (y + 1 < gh).then(|| i + gw),
        (x > 0).then(|| i - 1),
        (x + 1 < gw).then(|| i + 1),
    ]
    .into_iter()
    .flatten()
}

/// Spatial consistency: region differences of `enhanced` should match
/// those of `reference`. Sums over each region and each of its existing
/// 4-neighbours, divided by the number of regions.
pub fn loss_spa<T: Real>(enhanced: &Tensor<T>, reference: &Tensor<T>, region: usize) -> Result<T> {
    reference.expect_shape(enhanced.shape(), "spatial consistency reference")?;
    let ye = region_means(enhanced, region)?;
    let yo = region_means(reference, region)?;
    let (gh, gw) = region_grid(enhanced, region)?;
    let mut total = T::zero();
    for (e, o) in ye.iter().zip(&yo) {
        let mut s = T::zero();
        for i in 0..gh * gw {
            for j in neighbours(i, gh, gw) {
                let d = (e[i] - e[j]).abs() - (o[i] - o[j]).abs();
                s += d * d;
            }
        }
        total += s / T::lit((gh * gw) as f64);
    }
    Ok(total / T::lit(ye.len() as f64))
}

pub fn loss_spa_grad<T: Real>(enhanced: &Tensor<T>, reference: &Tensor<T>, region: usize) -> Result<Tensor<T>> {
    reference.expect_shape(enhanced.shape(), "spatial consistency reference")?;
    let ye = region_means(enhanced, region)?;
    let yo = region_means(reference, region)?;
    let (gh, gw) = region_grid(enhanced, region)?;
    let scale = T::lit(1.0 / ((gh * gw) as f64 * ye.len() as f64));
    let two = T::lit(2.0);
    let g: Vec<Vec<T>> = ye
        .iter()
        .zip(&yo)
        .map(|(e, o)| {
            let mut g = vec![T::zero(); gh * gw];
            for i in 0..gh * gw {
                for j in neighbours(i, gh, gw) {
                    let diff = e[i] - e[j];
                    let d = diff.abs() - (o[i] - o[j]).abs();
                    let v = two * d * diff.signum() * scale;
                    g[i] += v;
                    g[j] -= v;
                }
            }
            g
        })
        .collect();
    Ok(spread_regions(enhanced, region, &g))
}

fn channel_means<T: Real>(t: &Tensor<T>) -> Result<Vec<[T; 3]>> {
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::shape(format!("colour constancy needs 3 channels, got {s}")));
    }
    let inv = T::lit(1.0 / s.pixels() as f64);
    Ok((0..s.n)
        .map(|n| {
            let mut m = [T::zero(); 3];
            for px in t.sample(n).chunks_exact(3) {
                for k in 0..3 {
                    m[k] += px[k];
                }
            }
            m.map(|v| v * inv)
        })
        .collect())
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Colour constancy: squared differences between channel means.
pub fn loss_col<T: Real>(enhanced: &Tensor<T>) -> Result<T> {
    let means = channel_means(enhanced)?;
    let sum = means.iter().fold(T::zero(), |acc, m| {
        acc + PAIRS.iter().fold(T::zero(), |a, &(p, q)| a + (m[p] - m[q]) * (m[p] - m[q]))
    });
    Ok(sum / T::lit(means.len() as f64))
}

pub fn loss_col_grad<T: Real>(enhanced: &Tensor<T>) -> Result<Tensor<T>> {
    let means = channel_means(enhanced)?;
    let s = enhanced.shape();
    let scale = T::lit(2.0 / (s.pixels() as f64 * s.n as f64));
    let per: Vec<[T; 3]> = means
        .iter()
        .map(|m| {
            let mut g = [T::zero(); 3];
            for &(p, q) in &PAIRS {
                g[p] += (m[p] - m[q]) * scale;
                g[q] -= (m[p] - m[q]) * scale;
            }
            g
        })
        .collect();
    Ok(Tensor::from_fn(s, |n, _, _, c| per[n][c]))
}

/// Mean absolute horizontal and vertical forward differences of one channel.
fn tv_terms<T: Real>(t: &Tensor<T>, n: usize, c: usize) -> (T, T) {
    let s = t.shape();
    let d = t.sample(n);
    let at = |y: usize, x: usize| d[(y * s.w + x) * s.c + c];
    let mut h = T::zero();
    let mut v = T::zero();
    for y in 0..s.h {
        for x in 0..s.w {
            if x + 1 < s.w {
                h += (at(y, x + 1) - at(y, x)).abs();
            }
            if y + 1 < s.h {
                v += (at(y + 1, x) - at(y, x)).abs();
            }
        }
    }
    let nh = s.h * (s.w - 1);
    let nv = (s.h - 1) * s.w;
    let h = if nh > 0 { h / T::lit(nh as f64) } else { T::zero() };
    let v = if nv > 0 { v / T::lit(nv as f64) } else { T::zero() };
    (h, v)
}

/// Illumination smoothness of the difference map: for each channel the
/// squared sum of the mean absolute horizontal and vertical differences,
/// averaged over channels and samples.
pub fn loss_tv<T: Real>(map: &Tensor<T>) -> Result<T> {
    let s = map.shape();
    if s.is_empty() {
        return Err(Error::shape(format!("empty map {s}")));
    }
    let mut total = T::zero();
    for n in 0..s.n {
        for c in 0..s.c {
            let (h, v) = tv_terms(map, n, c);
            total += (h + v) * (h + v);
        }
    }
    Ok(total / T::lit((s.n * s.c) as f64))
}

pub fn loss_tv_grad<T: Real>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let s = map.shape();
    if s.is_empty() {
        return Err(Error::shape(format!("empty map {s}")));
    }
    let mut g = Tensor::zeros(s);
    let nh = s.h * (s.w - 1);
    let nv = (s.h - 1) * s.w;
    for n in 0..s.n {
        for c in 0..s.c {
            let (h, v) = tv_terms(map, n, c);
            let outer = T::lit(2.0) * (h + v) / T::lit((s.n * s.c) as f64);
            let gh = if nh > 0 { outer / T::lit(nh as f64) } else { T::zero() };
            let gv = if nv > 0 { outer / T::lit(nv as f64) } else { T::zero() };
            for y in 0..s.h {
                for x in 0..s.w {
                    if x + 1 < s.w {
                        let k = (map.at(n, y, x + 1, c) - map.at(n, y, x, c)).signum() * gh;
                        g.data_mut()[map.index(n, y, x + 1, c)] += k;
                        g.data_mut()[map.index(n, y, x, c)] -= k;
                    }
                    if y + 1 < s.h {
                        let k = (map.at(n, y + 1, x, c) - map.at(n, y, x, c)).signum() * gv;
                        g.data_mut()[map.index(n, y + 1, x, c)] += k;
                        g.data_mut()[map.index(n, y, x, c)] -= k;
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Exposure control: SmoothL1 distance of `alpha * E_i` from `K`, averaged
/// over the `T` regions of side `region`.
pub fn loss_ie<T: Real>(enhanced: &Tensor<T>, w: &LossWeights) -> Result<T> {
    let means = region_means(enhanced, w.region_size)?;
    let (alpha, k, beta) = (T::lit(w.alpha), T::lit(w.exposure_level), T::lit(w.smoothl1_beta));
    let mut total = T::zero();
    for m in &means {
        let s = m.iter().fold(T::zero(), |a, &e| a + smooth_l1(alpha * e - k, beta));
        total += s / T::lit(m.len() as f64);
    }
    Ok(total / T::lit(means.len() as f64))
}

pub fn loss_ie_grad<T: Real>(enhanced: &Tensor<T>, w: &LossWeights) -> Result<Tensor<T>> {
    let means = region_means(enhanced, w.region_size)?;
    let (alpha, k, beta) = (T::lit(w.alpha), T::lit(w.exposure_level), T::lit(w.smoothl1_beta));
    let n = T::lit(means.len() as f64);
    let g: Vec<Vec<T>> = means
        .iter()
        .map(|m| {
            let t = T::lit(m.len() as f64);
            m.iter()
                .map(|&e| alpha * smooth_l1_grad(alpha * e - k, beta) / (t * n))
                .collect()
        })
        .collect();
    Ok(spread_regions(enhanced, w.region_size, &g))
}

/// Mean SmoothL1 distance between the generated light map and its label.
pub fn loss_light<T: Real>(o2: &Tensor<T>, label: &Tensor<T>, beta: f64) -> Result<T> {
    label.expect_shape(o2.shape(), "light label")?;
    let beta = T::lit(beta);
    let s = o2
        .data()
        .iter()
        .zip(label.data())
        .fold(T::zero(), |a, (&o, &l)| a + smooth_l1(o - l, beta));
    Ok(s / T::lit(o2.data().len() as f64))
}

pub fn loss_light_grad<T: Real>(o2: &Tensor<T>, label: &Tensor<T>, beta: f64) -> Result<Tensor<T>> {
    label.expect_shape(o2.shape(), "light label")?;
    let beta = T::lit(beta);
    let inv = T::lit(1.0 / o2.data().len() as f64);
    o2.zip_map(label, |o, l| smooth_l1_grad(o - l, beta) * inv)
}

/// Everything the full objective reads.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a, T> {
    /// `I_N` after adjustment.
    pub enhanced: &'a Tensor<T>,
    /// `P_E - P_S`.
    pub difference: &'a Tensor<T>,
    pub o2: &'a Tensor<T>,
    /// `I_l`.
    pub light_label: &'a Tensor<T>,
    /// `I_o`.
    pub content_label: &'a Tensor<T>,
}

/// Gradients of the weighted total.
#[derive(Clone, Debug)]
pub struct LossGrads<T> {
    pub enhanced: Tensor<T>,
    pub difference: Tensor<T>,
    pub o2: Tensor<T>,
}

/// Evaluate all parts and the weighted total.
pub fn evaluate<T: Real>(x: &LossInputs<'_, T>, w: &LossWeights) -> Result<LossReport> {
    let f = |v: T| v.to_f64().unwrap();
    loss_total(
        [
            f(loss_spa(x.enhanced, x.content_label, w.spa_region_size)?),
            f(loss_col(x.enhanced)?),
            f(loss_tv(x.difference)?),
            f(loss_ie(x.enhanced, w)?),
            f(loss_light(x.o2, x.light_label, w.smoothl1_beta)?),
        ],
        w,
    )
}

/// Gradient of the weighted total with respect to the enhanced image, the
/// difference map and `O2`.
pub fn total_grad<T: Real>(x: &LossInputs<'_, T>, w: &LossWeights) -> Result<LossGrads<T>> {
    let scaled = |t: Tensor<T>, k: f64| t.map(|v| v * T::lit(k));
    let mut enhanced = scaled(loss_spa_grad(x.enhanced, x.content_label, w.spa_region_size)?, w.spa);
    enhanced.add_assign(&scaled(loss_col_grad(x.enhanced)?, w.col));
    enhanced.add_assign(&scaled(loss_ie_grad(x.enhanced, w)?, w.ie));
    Ok(LossGrads {
        enhanced,
        difference: scaled(loss_tv_grad(x.difference)?, w.tv),
        o2: scaled(loss_light_grad(x.o2, x.light_label, w.smoothl1_beta)?, w.light),
    })
}
