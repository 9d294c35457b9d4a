//! Analytic gradients against central finite differences at f64.
//!
//! Each check builds a scalar `S = sum_k <w_k, y_k>` over the outputs with
//! fixed random weights `w_k`, backpropagates `w_k`, and compares 100
//! randomly chosen coordinates of the input and parameter gradients.

use ldenhancer::adjust::{interweave_adjust, interweave_backward};
use ldenhancer::losses::{self, LossWeights};
use ldenhancer::network::{Decoder, Estimator, FeatureExtractor, Network, NetworkConfig, OutputGrads};
use ldenhancer::nn::{
    BatchNorm2d, Conv2d, ConvTranspose2d, CrossAttention, LayerNorm, Linear, Mode, Module, Param,
};
use ldenhancer::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const SAMPLES: usize = 100;
const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
/// Central differences of `S` carry rounding noise that grows like
/// `eps * |w * y|_2 / STEP` (independent rounding errors add in quadrature). Gradients below `NOISE_MULT` times that
/// level divided by `TOL` are compared absolutely against it instead of
/// relatively; this is what lets structurally zero gradients (a bias
/// feeding batch normalisation) pass.
const NOISE_MULT: f64 = 64.0;

pub type Outcome = Result<Summary, String>;

/// Largest error seen and how many coordinates were compared relatively.
#[derive(Clone, Copy, Debug)]
pub struct Summary {
    pub worst: f64,
    pub relative: usize,
}

impl Summary {
    fn merge(self, other: Summary) -> Summary {
        Summary {
            worst: self.worst.max(other.worst),
            relative: self.relative.min(other.relative),
        }
    }
}

struct NoParams;

impl Module<f64> for NoParams {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param<f64>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<f64>)) {}
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: Shape, lo: f64, hi: f64, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| r.gen_range(lo..hi))
}

/// Move trainable parameters away from their initial values so that every
/// term of the backward pass is exercised.
fn perturb_params<M: Module<f64>>(m: &mut M, std: f64, r: &mut impl Rng) {
    let d = Normal::new(0.0, std).unwrap();
    m.visit_mut("", &mut |_, p| {
        if p.trainable {
            p.value.iter_mut().for_each(|v| *v += d.sample(r));
        }
    });
}

fn dot(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

fn param_names<M: Module<f64>>(m: &M) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    m.visit("", &mut |n, p| {
        if p.trainable && !p.is_empty() {
            out.push((n.to_string(), p.len()))
        }
    });
    out
}

fn param_grad<M: Module<f64>>(m: &M, name: &str, i: usize) -> f64 {
    let mut g = 0.0;
    m.visit("", &mut |n, p| {
        if n == name {
            g = p.grad[i]
        }
    });
    g
}

fn nudge<M: Module<f64>>(m: &mut M, name: &str, i: usize, delta: f64) {
    m.visit_mut("", &mut |n, p| {
        if n == name {
            p.value[i] += delta
        }
    });
}

/// `forward` returns the outputs; `backward` receives output gradients and
/// returns input gradients, accumulating parameter gradients into `m`.
pub fn check<M, F, B>(
    name: &str,
    m: &mut M,
    inputs: Vec<Tensor<f64>>,
    seed: u64,
    forward: F,
    backward: B,
) -> Result<Summary, String>
where
    M: Module<f64>,
    F: Fn(&M, &[Tensor<f64>]) -> Vec<Tensor<f64>>,
    B: Fn(&mut M, &[Tensor<f64>], &[Tensor<f64>]) -> Vec<Tensor<f64>>,
{
    let mut r = rng(seed);
    let outputs = forward(m, &inputs);
    let weights: Vec<Tensor<f64>> = outputs
        .iter()
        .map(|o| random_tensor(o.shape(), -1.0, 1.0, &mut r))
        .collect();
    m.zero_grad();
    let d_inputs = backward(m, &inputs, &weights);
    if d_inputs.len() != inputs.len() {
        return Err(format!("{name}: expected one gradient per input"));
    }

    let magnitude: f64 = outputs
        .iter()
        .zip(&weights)
        .map(|(o, w)| o.data().iter().zip(w.data()).map(|(a, b)| (a * b).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let floor = (NOISE_MULT * f64::EPSILON * magnitude / STEP / TOL).max(1e-8);
    let mut relative = 0;
    let params = param_names(m);
    let slots = inputs.len() + params.len();
    let mut worst = 0.0f64;
    for _ in 0..SAMPLES {
        let slot = r.gen_range(0..slots);
        let (analytic, numeric, what) = if slot < inputs.len() {
            let i = r.gen_range(0..inputs[slot].data().len());
            let eval = |delta: f64| {
                let mut xs = inputs.clone();
                xs[slot].data_mut()[i] += delta;
                dot(&forward(m, &xs), &weights)
            };
            let num = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            (d_inputs[slot].data()[i], num, format!("input {slot}[{i}]"))
        } else {
            let (pname, len) = &params[slot - inputs.len()];
            let i = r.gen_range(0..*len);
            let analytic = param_grad(m, pname, i);
            nudge(m, pname, i, STEP);
            let plus = dot(&forward(m, &inputs), &weights);
            nudge(m, pname, i, -2.0 * STEP);
            let minus = dot(&forward(m, &inputs), &weights);
            nudge(m, pname, i, STEP);
            (analytic, (plus - minus) / (2.0 * STEP), format!("{pname}[{i}]"))
        };
        let scale = analytic.abs().max(numeric.abs());
        if scale >= floor {
            relative += 1;
        }
        let err = (analytic - numeric).abs() / scale.max(floor);
        worst = worst.max(err);
        if !(err < TOL) {
            return Err(format!(
                "{name}: {what}: analytic {analytic:e} vs numeric {numeric:e} (rel {err:e})"
            ));
        }
    }
    if relative < SAMPLES / 2 {
        return Err(format!("{name}: only {relative}/{SAMPLES} gradients above the noise floor"));
    }
    Ok(Summary { worst, relative })
}

pub fn conv_stride2() -> Outcome {
    let mut r = rng(1);
    let mut conv = Conv2d::<f64>::new(3, 4, 2, 2, 0, &mut r);
    perturb_params(&mut conv, 0.3, &mut r);
    let x = random_tensor(Shape::new(2, 8, 8, 3), -1.0, 1.0, &mut r);
    check(
        "conv 2x2/2",
        &mut conv,
        vec![x],
        11,
        |m, x| vec![m.forward(&x[0]).unwrap()],
        |m, x, dy| vec![m.backward(&x[0], &dy[0]).unwrap()],
    )
}

pub fn conv_3x3_padded_and_pointwise() -> Outcome {
    let mut r = rng(2);
    let mut conv = Conv2d::<f64>::new(5, 3, 3, 1, 1, &mut r);
    perturb_params(&mut conv, 0.3, &mut r);
    let x = random_tensor(Shape::new(2, 8, 8, 5), -1.0, 1.0, &mut r);
    let first = check(
        "conv 3x3/1",
        &mut conv,
        vec![x.clone()],
        12,
        |m, x| vec![m.forward(&x[0]).unwrap()],
        |m, x, dy| vec![m.backward(&x[0], &dy[0]).unwrap()],
    )?;
    let mut pw = Conv2d::<f64>::new(5, 5, 1, 1, 0, &mut r);
    perturb_params(&mut pw, 0.3, &mut r);
    let second = check(
        "conv 1x1",
        &mut pw,
        vec![x],
        13,
        |m, x| vec![m.forward(&x[0]).unwrap()],
        |m, x, dy| vec![m.backward(&x[0], &dy[0]).unwrap()],
    )?;
    Ok(first.merge(second))
}

pub fn deconv() -> Outcome {
    let mut r = rng(3);
    let mut d = ConvTranspose2d::<f64>::new(4, 3, 2, &mut r);
    perturb_params(&mut d, 0.3, &mut r);
    let x = random_tensor(Shape::new(2, 4, 4, 4), -1.0, 1.0, &mut r);
    check(
        "deconv 2x2/2",
        &mut d,
        vec![x],
        14,
        |m, x| vec![m.forward(&x[0]).unwrap()],
        |m, x, dy| vec![m.backward(&x[0], &dy[0]).unwrap()],
    )
}

pub fn batchnorm_train_mode() -> Outcome {
    let mut r = rng(4);
    let mut bn = BatchNorm2d::<f64>::new(3);
    perturb_params(&mut bn, 0.3, &mut r);
    let x = random_tensor(Shape::new(2, 8, 8, 3), -2.0, 2.0, &mut r);
    check(
        "batchnorm",
        &mut bn,
        vec![x],
        15,
        |m, x| vec![m.forward(&x[0], Mode::Train).unwrap().0],
        |m, x, dy| {
            let (_, cache) = m.forward(&x[0], Mode::Train).unwrap();
            vec![m.backward(&cache, &dy[0])]
        },
    )
}

pub fn layernorm_and_linear() -> Outcome {
    let mut r = rng(5);
    let mut ln = LayerNorm::<f64>::new(8);
    perturb_params(&mut ln, 0.3, &mut r);
    let x = random_tensor(Shape::new(1, 8, 8, 8), -1.0, 1.0, &mut r);
    let first = check(
        "layernorm",
        &mut ln,
        vec![x.clone()],
        16,
        |m, x| vec![Tensor::from_vec(x[0].shape(), m.forward(x[0].data()).0).unwrap()],
        |m, x, dy| {
            let (_, cache) = m.forward(x[0].data());
            vec![Tensor::from_vec(x[0].shape(), m.backward(&cache, dy[0].data())).unwrap()]
        },
    )?;
    let mut lin = Linear::<f64>::new(8, 5, true, &mut r);
    perturb_params(&mut lin, 0.3, &mut r);
    let rows = 64;
    let second = check(
        "linear",
        &mut lin,
        vec![x],
        17,
        move |m, x| {
            vec![Tensor::from_vec(Shape::new(1, 8, 8, 5), m.forward(x[0].data(), rows)).unwrap()]
        },
        move |m, x, dy| {
            vec![Tensor::from_vec(x[0].shape(), m.backward(x[0].data(), dy[0].data(), rows)).unwrap()]
        },
    )?;
    Ok(first.merge(second))
}

pub fn cross_attention() -> Outcome {
    let mut r = rng(6);
    let mut att = CrossAttention::<f64>::new(8, 2, 32, &mut r).unwrap();
    perturb_params(&mut att, 0.3, &mut r);
    let content = random_tensor(Shape::new(2, 4, 4, 8), -1.0, 1.0, &mut r);
    let light = random_tensor(Shape::new(2, 4, 4, 8), -1.0, 1.0, &mut r);
    check(
        "cross-attention",
        &mut att,
        vec![content, light],
        18,
        |m, x| vec![m.forward(&x[0], &x[1]).unwrap().0],
        |m, x, dy| {
            let (_, cache) = m.forward(&x[0], &x[1]).unwrap();
            let (dc, dl) = m.backward(&cache, &dy[0]);
            vec![dc, dl]
        },
    )
}

pub fn feature_extractor() -> Outcome {
    let mut r = rng(7);
    let mut fe = FeatureExtractor::<f64>::new(&[4, 4, 8, 8], &mut r);
    perturb_params(&mut fe, 0.3, &mut r);
    let x = random_tensor(Shape::new(2, 32, 32, 3), 0.0, 1.0, &mut r);
    check(
        "feature extractor",
        &mut fe,
        vec![x],
        19,
        |m, x| vec![m.forward(&x[0], Mode::Train).unwrap().output().clone()],
        |m, x, dy| {
            let cache = m.forward(&x[0], Mode::Train).unwrap();
            vec![m.backward(&cache, &dy[0]).unwrap()]
        },
    )
}

pub fn decoder() -> Outcome {
    let mut r = rng(8);
    let mut dec = Decoder::<f64>::new(8, &[8, 4, 3], &mut r);
    perturb_params(&mut dec, 0.3, &mut r);
    let x = random_tensor(Shape::new(2, 1, 1, 8), -1.0, 1.0, &mut r);
    check(
        "decoder",
        &mut dec,
        vec![x],
        20,
        |m, x| vec![m.forward(&x[0], Mode::Train).unwrap().output().clone()],
        |m, x, dy| {
            let cache = m.forward(&x[0], Mode::Train).unwrap();
            vec![m.backward(&cache, &dy[0]).unwrap()]
        },
    )
}

pub fn estimator_head() -> Outcome {
    let mut r = rng(9);
    let mut est = Estimator::<f64>::new(3, 16, &mut r);
    perturb_params(&mut est, 0.1, &mut r);
    let x = random_tensor(Shape::new(1, 8, 8, 3), 0.0, 1.0, &mut r);
    check(
        "estimator",
        &mut est,
        vec![x],
        21,
        |m, x| vec![m.forward(&x[0]).unwrap().output().clone()],
        |m, x, dy| {
            let cache = m.forward(&x[0]).unwrap();
            vec![m.backward(&cache, &dy[0]).unwrap()]
        },
    )
}

pub fn full_network() -> Outcome {
    let mut r = rng(10);
    let cfg = NetworkConfig {
        input_size: 32,
        ..Default::default()
    };
    let mut net = Network::<f64>::new(cfg).unwrap();
    perturb_params(&mut net, 0.2, &mut r);
    let x = random_tensor(Shape::new(2, 32, 32, 3), 0.0, 1.0, &mut r);
    check(
        "network",
        &mut net,
        vec![x],
        22,
        |m, x| {
            let (o, _) = m.forward(&x[0], Mode::Train).unwrap();
            vec![o.suppression.data, o.enhancement.data, o.o2]
        },
        |m, x, dy| {
            let (_, tape) = m.forward(&x[0], Mode::Train).unwrap();
            let grads = OutputGrads {
                suppression: dy[0].clone(),
                enhancement: dy[1].clone(),
                o2: dy[2].clone(),
            };
            vec![m.backward(&tape, &grads).unwrap()]
        },
    )
}

pub fn interweave_adjustment() -> Outcome {
    let mut r = rng(11);
    let shape = Shape::new(1, 8, 8, 3);
    // Keep every update strictly inside (0, 1) so the clamp never fires.
    let i0 = random_tensor(shape, 0.2, 0.8, &mut r);
    let ps = random_tensor(shape, -0.3, 0.3, &mut r);
    let pe = random_tensor(shape, -0.3, 0.3, &mut r);
    check(
        "interweave adjustment",
        &mut NoParams,
        vec![i0, ps, pe],
        23,
        |_, x| vec![interweave_adjust(&x[0], &x[1], &x[2], 8).unwrap().output().clone()],
        |_, x, dy| {
            let trace = interweave_adjust(&x[0], &x[1], &x[2], 8).unwrap();
            assert_eq!(trace.clamp_events, 0);
            let g = interweave_backward(&trace, &dy[0]);
            vec![g.image, g.suppression, g.enhancement]
        },
    )
}

/// Scalar losses: the "outputs" are a single 1x1x1x1 tensor.
fn scalar(v: f64) -> Vec<Tensor<f64>> {
    vec![Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![v]).unwrap()]
}

fn scaled(t: Tensor<f64>, dy: &[Tensor<f64>]) -> Tensor<f64> {
    let k = dy[0].data()[0];
    t.map(|v| v * k)
}

pub fn loss_spa() -> Outcome {
    let mut r = rng(12);
    let e = random_tensor(Shape::new(2, 8, 8, 3), 0.0, 1.0, &mut r);
    let o = random_tensor(Shape::new(2, 8, 8, 3), -0.5, 0.5, &mut r);
    let o2 = o.clone();
    check(
        "spatial consistency",
        &mut NoParams,
        vec![e],
        24,
        move |_, x| scalar(losses::loss_spa(&x[0], &o, 4).unwrap()),
        move |_, x, dy| vec![scaled(losses::loss_spa_grad(&x[0], &o2, 4).unwrap(), dy)],
    )
}

pub fn loss_col() -> Outcome {
    let mut r = rng(13);
    let e = random_tensor(Shape::new(2, 8, 8, 3), 0.0, 1.0, &mut r);
    check(
        "colour constancy",
        &mut NoParams,
        vec![e],
        25,
        |_, x| scalar(losses::loss_col(&x[0]).unwrap()),
        |_, x, dy| vec![scaled(losses::loss_col_grad(&x[0]).unwrap(), dy)],
    )
}

pub fn loss_tv() -> Outcome {
    let mut r = rng(14);
    let d = random_tensor(Shape::new(2, 8, 8, 3), -2.0, 2.0, &mut r);
    check(
        "illumination smoothness",
        &mut NoParams,
        vec![d],
        26,
        |_, x| scalar(losses::loss_tv(&x[0]).unwrap()),
        |_, x, dy| vec![scaled(losses::loss_tv_grad(&x[0]).unwrap(), dy)],
    )
}

pub fn loss_ie() -> Outcome {
    let mut r = rng(15);
    // Region means straddle both SmoothL1 branches with beta = 0.1.
    let w = LossWeights {
        region_size: 4,
        smoothl1_beta: 0.1,
        ..Default::default()
    };
    let e = random_tensor(Shape::new(2, 8, 8, 3), 0.0, 1.0, &mut r);
    let w2 = w.clone();
    check(
        "exposure control",
        &mut NoParams,
        vec![e],
        27,
        move |_, x| scalar(losses::loss_ie(&x[0], &w).unwrap()),
        move |_, x, dy| vec![scaled(losses::loss_ie_grad(&x[0], &w2).unwrap(), dy)],
    )
}

pub fn loss_light() -> Outcome {
    let mut r = rng(16);
    let o2 = random_tensor(Shape::new(2, 8, 8, 3), 0.0, 2.0, &mut r);
    let label = random_tensor(Shape::new(2, 8, 8, 3), 0.0, 1.0, &mut r);
    let l2 = label.clone();
    check(
        "light distribution",
        &mut NoParams,
        vec![o2],
        28,
        move |_, x| scalar(losses::loss_light(&x[0], &label, 0.5).unwrap()),
        move |_, x, dy| vec![scaled(losses::loss_light_grad(&x[0], &l2, 0.5).unwrap(), dy)],
    )
}

pub fn total_objective() -> Outcome {
    let mut r = rng(17);
    let shape = Shape::new(2, 16, 16, 3);
    let w = LossWeights::default();
    let enhanced = random_tensor(shape, 0.0, 1.0, &mut r);
    let diff = random_tensor(shape, -1.0, 1.0, &mut r);
    let o2 = random_tensor(shape, 0.0, 1.0, &mut r);
    let light = random_tensor(shape, 0.0, 1.0, &mut r);
    let content = random_tensor(shape, -0.5, 0.5, &mut r);
    let (l1, c1, w1) = (light.clone(), content.clone(), w.clone());
    check(
        "weighted total",
        &mut NoParams,
        vec![enhanced, diff, o2],
        29,
        move |_, x| {
            let inputs = losses::LossInputs {
                enhanced: &x[0],
                difference: &x[1],
                o2: &x[2],
                light_label: &light,
                content_label: &content,
            };
            scalar(losses::evaluate(&inputs, &w).unwrap().total)
        },
        move |_, x, dy| {
            let inputs = losses::LossInputs {
                enhanced: &x[0],
                difference: &x[1],
                o2: &x[2],
                light_label: &l1,
                content_label: &c1,
            };
            let g = losses::total_grad(&inputs, &w1).unwrap();
            vec![scaled(g.enhanced, dy), scaled(g.difference, dy), scaled(g.o2, dy)]
        },
    )
}

/// Every check, in the order of the network, the adjustment and the losses.
pub const CASES: &[(&str, fn() -> Outcome)] = &[
    ("conv_stride2", conv_stride2),
    ("conv_3x3_padded_and_pointwise", conv_3x3_padded_and_pointwise),
    ("deconv", deconv),
    ("batchnorm_train_mode", batchnorm_train_mode),
    ("layernorm_and_linear", layernorm_and_linear),
    ("cross_attention", cross_attention),
    ("feature_extractor", feature_extractor),
    ("decoder", decoder),
    ("estimator_head", estimator_head),
    ("full_network", full_network),
    ("interweave_adjustment", interweave_adjustment),
    ("loss_spa", loss_spa),
    ("loss_col", loss_col),
    ("loss_tv", loss_tv),
    ("loss_ie", loss_ie),
    ("loss_light", loss_light),
    ("total_objective", total_objective),
];
