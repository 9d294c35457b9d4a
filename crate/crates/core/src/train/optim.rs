use crate::error::{Error, Result};
use crate::network::WeightArchive;
use crate::nn::{Module, Param};
use crate::tensor::Real;

/// Adam with decoupled weight decay, applied to every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    names: Vec<String>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(model: &impl Module<T>, lr: f64, weight_decay: f64) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        model.visit("", &mut |name, p| {
            if p.trainable {
                names.push(name.to_string());
                m.push(vec![T::zero(); p.len()]);
            }
        });
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            names,
            v: m.clone(),
            m,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut impl Module<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let decay = T::one() - T::lit(self.lr * self.weight_decay);
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_mut("", &mut |_, p: &mut Param<T>| {
            if !p.trainable {
                return;
            }
            let (m, v) = (&mut ms[k], &mut vs[k]);
            k += 1;
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.value[i] = p.value[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }

    /// First and second moments as archive entries `m.<param>` / `v.<param>`.
    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new();
        for (prefix, moments) in [("m", &self.m), ("v", &self.v)] {
            for (name, vals) in self.names.iter().zip(moments) {
                let data = vals.iter().map(|x| x.to_f32().unwrap()).collect();
                a.push(format!("{prefix}.{name}"), vec![vals.len()], data)
                    .expect("unique names");
            }
        }
        a
    }

    pub fn load_archive(&mut self, archive: &WeightArchive, step: u64) -> Result<()> {
        for (prefix, moments) in [("m", &mut self.m), ("v", &mut self.v)] {
            for (name, vals) in self.names.iter().zip(moments.iter_mut()) {
                let key = format!("{prefix}.{name}");
                let e = archive
                    .get(&key)
                    .ok_or_else(|| Error::Archive(format!("optimizer state misses {key}")))?;
                if e.data.len() != vals.len() {
                    return Err(Error::Archive(format!("optimizer entry {key} has the wrong length")));
                }
                *vals = e.data.iter().map(|&x| T::lit(x as f64)).collect();
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        p: Param<f64>,
    }

    impl Module<f64> for Quadratic {
        fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
            f("p", &self.p)
        }
        fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f("p", &mut self.p)
        }
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut q = Quadratic {
            p: Param::new(vec![2], vec![1.0, -2.0]),
        };
        q.p.grad = vec![0.5, -4.0];
        let mut opt = AdamW::new(&q, 0.1, 0.01);
        opt.step(&mut q);
        // Bias-corrected first step moves each weight by lr * sign(g).
        let expect = |w: f64, g: f64| w * (1.0 - 0.1 * 0.01) - 0.1 * g / (g.abs() + 1e-8);
        assert!((q.p.value[0] - expect(1.0, 0.5)).abs() < 1e-12);
        assert!((q.p.value[1] - expect(-2.0, -4.0)).abs() < 1e-12);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn minimises_quadratic() {
        let mut q = Quadratic {
            p: Param::new(vec![1], vec![3.0]),
        };
        let mut opt = AdamW::new(&q, 0.05, 0.0);
        for _ in 0..500 {
            q.p.grad = vec![2.0 * q.p.value[0]];
            opt.step(&mut q);
        }
        assert!(q.p.value[0].abs() < 0.05);
    }

    #[test]
    fn state_round_trip() {
        let mut q = Quadratic {
            p: Param::new(vec![1], vec![3.0]),
        };
        let mut opt = AdamW::<f64>::new(&q, 0.05, 0.0);
        q.p.grad = vec![1.5];
        opt.step(&mut q);
        let a = opt.to_archive();
        let mut fresh = AdamW::<f64>::new(&q, 0.05, 0.0);
        fresh.load_archive(&a, opt.step_count()).unwrap();
        assert_eq!(fresh.step_count(), 1);
        assert_eq!(fresh.m[0][0], opt.m[0][0] as f32 as f64);
    }
}
