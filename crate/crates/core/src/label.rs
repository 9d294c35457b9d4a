//! Smooth light distribution labels.
//!
//! Each channel is split into a least-squares plane `A` and a residual `r`.
//! The residual is smoothed by the closed-form minimiser of
//!
//! ```text
//! |L - r|^2 + lambda * |Lap(L)|^2
//! ```
//!
//! where `Lap` is the 5-point Laplacian with mirrored (Neumann) borders. That
//! operator is diagonalised by the DFT of the symmetric extension of the
//! image, so the solve is one forward FFT, a pointwise multiply by
//! `1 / (1 + lambda * k^2)` and one inverse FFT. The plane is added back
//! afterwards, which makes affine images exact fixed points.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::network::WeightArchive;
use crate::tensor::{Real, Shape, Tensor};

pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Decomposition of an image into light distribution and content.
#[derive(Clone, Debug, PartialEq)]
pub struct LightLabelPair<T> {
    /// Smooth light distribution `I_l`, clipped to `[0, 1]`.
    pub light: Tensor<T>,
    /// Content residual `I_o = I - I_l`, taken before clipping.
    pub content: Tensor<T>,
    pub lambda: f64,
    /// Number of entries of `I_l` that clipping changed.
    pub clipped: usize,
}

/// Compute the light label of every sample and channel of `image`.
pub fn light_label<T: Real>(image: &Tensor<T>, lambda: f64) -> Result<LightLabelPair<T>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing weight must be positive, got {lambda}"
        )));
    }
    image.ensure_finite("light label input")?;
    let shape = image.shape();
    let (h, w, c) = shape.hwc();
    let mut smoother = SpectralSmoother::new(h, w, lambda);
    let mut light = vec![0.0f64; shape.len()];
    let mut plane = vec![0.0; h * w];
    for n in 0..shape.n {
        let sample = image.sample(n);
        let base = n * shape.sample_len();
        for ch in 0..c {
            let chan: Vec<f64> = (0..h * w)
                .map(|i| sample[i * c + ch].to_f64().unwrap())
                .collect();
            let fit = PlaneFit::new(&chan, h, w);
            fit.fill(&mut plane, h, w);
            let resid: Vec<f64> = chan.iter().zip(&plane).map(|(v, p)| v - p).collect();
            let smooth = smoother.apply(&resid);
            for i in 0..h * w {
                light[base + i * c + ch] = plane[i] + smooth[i];
            }
        }
    }
    let content = Tensor::from_vec(
        shape,
        image
            .data()
            .iter()
            .zip(&light)
            .map(|(&v, &l)| T::lit(v.to_f64().unwrap() - l))
            .collect(),
    )?;
    let mut clipped = 0;
    let light = light
        .into_iter()
        .map(|l| {
            let c = l.clamp(0.0, 1.0);
            if c != l {
                clipped += 1;
            }
            T::lit(c)
        })
        .collect();
    Ok(LightLabelPair {
        light: Tensor::from_vec(shape, light)?,
        content,
        lambda,
        clipped,
    })
}

/// Least-squares fit `a + b*(y - yc) + c*(x - xc)` over an `h x w` grid.
///
/// With centred coordinates the three basis functions are orthogonal, so
/// each coefficient is a single projection.
#[derive(Clone, Copy, Debug)]
pub struct PlaneFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PlaneFit {
    pub fn new(values: &[f64], h: usize, w: usize) -> Self {
        assert_eq!(values.len(), h * w);
        let yc = (h as f64 - 1.0) / 2.0;
        let xc = (w as f64 - 1.0) / 2.0;
        let (mut s, mut sy, mut sx, mut yy, mut xx) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let v = values[y * w + x];
                let dy = y as f64 - yc;
                let dx = x as f64 - xc;
                s += v;
                sy += v * dy;
                sx += v * dx;
                yy += dy * dy;
                xx += dx * dx;
            }
        }
        PlaneFit {
            a: s / (h * w) as f64,
            b: if yy > 0.0 { sy / yy } else { 0.0 },
            c: if xx > 0.0 { sx / xx } else { 0.0 },
        }
    }

    pub fn fill(&self, out: &mut [f64], h: usize, w: usize) {
        let yc = (h as f64 - 1.0) / 2.0;
        let xc = (w as f64 - 1.0) / 2.0;
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = self.a + self.b * (y as f64 - yc) + self.c * (x as f64 - xc);
            }
        }
    }
}

/// 5-point Laplacian with mirrored borders (`x[-1] = x[0]`).
pub fn neumann_laplacian(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = v[y * w + x];
            let up = v[y.saturating_sub(1) * w + x];
            let down = v[(y + 1).min(h - 1) * w + x];
            let left = v[y * w + x.saturating_sub(1)];
            let right = v[y * w + (x + 1).min(w - 1)];
            out[y * w + x] = up + down + left + right - 4.0 * c;
        }
    }
    out
}

/// Squared norm of the Laplacian of a single channel after removing its
/// best-fit plane.
pub fn curvature_energy(v: &[f64], h: usize, w: usize) -> f64 {
    let mut plane = vec![0.0; h * w];
    PlaneFit::new(v, h, w).fill(&mut plane, h, w);
    let detrended: Vec<f64> = v.iter().zip(&plane).map(|(a, b)| a - b).collect();
    neumann_laplacian(&detrended, h, w).iter().map(|l| l * l).sum()
}

struct SpectralSmoother {
    h: usize,
    w: usize,
    gain: Vec<f64>,
    planner: FftPlanner<f64>,
    buf: Vec<Complex<f64>>,
    col: Vec<Complex<f64>>,
}

impl SpectralSmoother {
    fn new(h: usize, w: usize, lambda: f64) -> Self {
        let (eh, ew) = (2 * h, 2 * w);
        let eig = |k: usize, n: usize| 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos() - 2.0;
        let ey: Vec<f64> = (0..eh).map(|k| eig(k, eh)).collect();
        let ex: Vec<f64> = (0..ew).map(|k| eig(k, ew)).collect();
        let mut gain = Vec::with_capacity(eh * ew);
        for &a in &ey {
            for &b in &ex {
                let l = a + b;
                gain.push(1.0 / (1.0 + lambda * l * l) / (eh * ew) as f64);
            }
        }
        SpectralSmoother {
            h,
            w,
            gain,
            planner: FftPlanner::new(),
            buf: vec![Complex::default(); eh * ew],
            col: vec![Complex::default(); eh],
        }
    }

    fn apply(&mut self, r: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let (eh, ew) = (2 * h, 2 * w);
        for y in 0..eh {
            let sy = if y < h { y } else { eh - 1 - y };
            for x in 0..ew {
                let sx = if x < w { x } else { ew - 1 - x };
                self.buf[y * ew + x] = Complex::new(r[sy * w + sx], 0.0);
            }
        }
        self.fft2(false);
        for (v, g) in self.buf.iter_mut().zip(&self.gain) {
            *v *= *g;
        }
        self.fft2(true);
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = self.buf[y * ew + x].re;
            }
        }
        out
    }

    fn fft2(&mut self, inverse: bool) {
        let (eh, ew) = (2 * self.h, 2 * self.w);
        let (row, column) = if inverse {
            (self.planner.plan_fft_inverse(ew), self.planner.plan_fft_inverse(eh))
        } else {
            (self.planner.plan_fft_forward(ew), self.planner.plan_fft_forward(eh))
        };
        row.process(&mut self.buf);
        for x in 0..ew {
            for y in 0..eh {
                self.col[y] = self.buf[y * ew + x];
            }
            column.process(&mut self.col);
            for y in 0..eh {
                self.buf[y * ew + x] = self.col[y];
            }
        }
    }
}

/// Write a label pair of a single image as archive entries `light` and
/// `content`, each with dims `[h, w, c]`.
pub fn save_label<T: Real>(pair: &LightLabelPair<T>, path: impl AsRef<Path>) -> Result<()> {
    let s = pair.light.shape();
    if s.n != 1 {
        return Err(Error::shape(format!("label cache holds one image, got {s}")));
    }
    let mut a = WeightArchive::new();
    let dims = vec![s.h, s.w, s.c];
    let f = |t: &Tensor<T>| t.data().iter().map(|v| v.to_f32().unwrap()).collect();
    a.push("light", dims.clone(), f(&pair.light))?;
    a.push("content", dims, f(&pair.content))?;
    a.save(path)
}

/// Read a cached label as `(I_l, I_o)`, each of shape `1 x h x w x c`.
pub fn load_label(path: impl AsRef<Path>) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let path = path.as_ref();
    let a = WeightArchive::load(path)?;
    let get = |name: &str| -> Result<Tensor<f32>> {
        let e = a
            .get(name)
            .ok_or_else(|| Error::Archive(format!("{}: missing entry {name}", path.display())))?;
        match e.dims[..] {
            [h, w, c] => Tensor::from_vec(Shape::new(1, h, w, c), e.data.clone()),
            _ => Err(Error::Archive(format!(
                "{}: entry {name} has dims {:?}",
                path.display(),
                e.dims
            ))),
        }
    };
    Ok((get("light")?, get("content")?))
}
