//! Interweave iteration adjustment.
//!
//! ```text
//! I_n = clamp(I_{n-1} + (P_E - P_S) * I_{n-1} * (1 - I_{n-1}), 0, 1),  n = 1..N
//! ```
//!
//! The same difference map is applied at every iteration. The clamp passes
//! gradients straight through inside `[0, 1]` and blocks them outside.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Every intermediate image of one adjustment run.
#[derive(Clone, Debug)]
pub struct AdjustmentTrace<T> {
    /// `I_0 ..= I_N`.
    pub frames: Vec<Tensor<T>>,
    /// `P_E - P_S`.
    pub difference: Tensor<T>,
    /// Number of pixel updates that left `[0, 1]` and were clamped.
    pub clamp_events: usize,
}

impl<T: Real> AdjustmentTrace<T> {
    pub fn iterations(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn output(&self) -> &Tensor<T> {
        self.frames.last().expect("trace holds I_0")
    }
}

/// Gradients of a scalar with respect to the three inputs of the adjustment.
#[derive(Clone, Debug)]
pub struct AdjustmentGrads<T> {
    pub image: Tensor<T>,
    pub suppression: Tensor<T>,
    pub enhancement: Tensor<T>,
}

pub fn interweave_adjust<T: Real>(
    i0: &Tensor<T>,
    p_s: &Tensor<T>,
    p_e: &Tensor<T>,
    iterations: usize,
) -> Result<AdjustmentTrace<T>> {
    if iterations < 1 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    p_s.expect_shape(i0.shape(), "suppression map")?;
    p_e.expect_shape(i0.shape(), "enhancement map")?;
    let difference = p_e.zip_map(p_s, |e, s| e - s)?;
    let mut frames = Vec::with_capacity(iterations + 1);
    frames.push(i0.clone());
    let mut clamp_events = 0;
    for _ in 0..iterations {
        let prev = frames.last().unwrap();
        let mut next = prev.clone();
        for (v, &d) in next.data_mut().iter_mut().zip(difference.data()) {
            let u = *v + d * *v * (T::one() - *v);
            let c = u.max(T::zero()).min(T::one());
            if c != u {
                clamp_events += 1;
            }
            *v = c;
        }
        frames.push(next);
    }
    Ok(AdjustmentTrace {
        frames,
        difference,
        clamp_events,
    })
}

/// Backpropagate `d_output` (gradient with respect to `I_N`) through the
/// whole trace.
pub fn interweave_backward<T: Real>(trace: &AdjustmentTrace<T>, d_output: &Tensor<T>) -> AdjustmentGrads<T> {
    let d = trace.difference.data();
    let mut g = d_output.clone();
    let mut d_diff = Tensor::<T>::zeros(g.shape());
    for prev in trace.frames[..trace.frames.len() - 1].iter().rev() {
        for (k, gk) in g.data_mut().iter_mut().enumerate() {
            let i = prev.data()[k];
            let s = i * (T::one() - i);
            let u = i + d[k] * s;
            if u < T::zero() || u > T::one() {
                *gk = T::zero();
                continue;
            }
            d_diff.data_mut()[k] += *gk * s;
            *gk *= T::one() + d[k] * (T::one() - i - i);
        }
    }
    AdjustmentGrads {
        image: g,
        suppression: d_diff.map(|v| -v),
        enhancement: d_diff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn scalar_step() {
        let tr = interweave_adjust(&t(&[0.5]), &t(&[0.1]), &t(&[0.9]), 1).unwrap();
        assert!((tr.output().data()[0] - 0.7).abs() < 1e-15);
        assert_eq!(tr.frames.len(), 2);
    }

    #[test]
    fn clamps_and_counts() {
        let tr = interweave_adjust(&t(&[0.75, 0.25]), &t(&[-1.0, 1.0]), &t(&[1.0, -1.0]), 1).unwrap();
        assert_eq!(tr.output().data(), &[1.0, 0.0]);
        assert_eq!(tr.clamp_events, 2);
    }

    #[test]
    fn rejects_zero_iterations_and_shape_mismatch() {
        assert!(interweave_adjust(&t(&[0.5]), &t(&[0.0]), &t(&[0.0]), 0).is_err());
        assert!(interweave_adjust(&t(&[0.5]), &t(&[0.0, 0.0]), &t(&[0.0]), 1).is_err());
    }

    #[test]
    fn clamped_pixels_get_no_gradient() {
        let tr = interweave_adjust(&t(&[0.75]), &t(&[-1.0]), &t(&[1.0]), 1).unwrap();
        let g = interweave_backward(&tr, &t(&[1.0]));
        assert_eq!(g.image.data()[0], 0.0);
        assert_eq!(g.enhancement.data()[0], 0.0);
    }
}
