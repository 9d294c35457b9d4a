use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::archive::WeightArchive;
use super::blocks::{Decoder, Estimator, EstimatorCache, FeatureExtractor, StackCache};
use super::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::nn::{AttentionCache, Conv2d, CrossAttention, Mode, Module, Param};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapKind {
    Suppression,
    Enhancement,
}

/// Per-pixel adjustment coefficients in `[-1, 1]`, one per colour channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMap<T> {
    pub kind: MapKind,
    pub data: Tensor<T>,
}

/// Names the intermediate tensors of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Extractor stage output `C_i`; the last stage is `F0`.
    Extract(usize),
    F0,
    F1,
    F2,
    /// Light generation stage output `D_i`; the last stage is `O2`.
    LightDecode(usize),
    O2,
    /// Cross-attention block output before deconvolution.
    Refined,
    ContentDecode(usize),
    O1,
    /// Estimator convolution `Conv_i` of the given head.
    Head(MapKind, usize),
    /// Channel concatenation feeding `Conv4` (`i = 4`) or the output layer.
    HeadConcat(MapKind, usize),
    Map(MapKind),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = |k: &MapKind| match k {
            MapKind::Suppression => "S",
            MapKind::Enhancement => "E",
        };
        match self {
            Stage::Extract(i) => write!(f, "C{i}"),
            Stage::F0 => f.write_str("F0"),
            Stage::F1 => f.write_str("F1"),
            Stage::F2 => f.write_str("F2"),
            Stage::LightDecode(i) => write!(f, "D{i}"),
            Stage::O2 => f.write_str("O2"),
            Stage::Refined => f.write_str("Norm(FFN(My)+My)"),
            Stage::ContentDecode(i) => write!(f, "DeConv{i}"),
            Stage::O1 => f.write_str("O1"),
            Stage::Head(k, i) => write!(f, "Conv{i}[{}]", tag(k)),
            Stage::HeadConcat(k, i) => write!(f, "Concat{i}[{}]", tag(k)),
            Stage::Map(k) => write!(f, "P_{}", tag(k)),
        }
    }
}

/// Everything a forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub suppression: ParameterMap<T>,
    pub enhancement: ParameterMap<T>,
    /// Light distribution estimate, supervised by the light label.
    pub o2: Tensor<T>,
    /// Refined content features fed to the enhancement head.
    pub o1: Tensor<T>,
    /// Shape of every named intermediate, in dataflow order.
    pub stages: Vec<(Stage, Shape)>,
}

impl<T: Real> ForwardOutput<T> {
    pub fn stage_shape(&self, stage: Stage) -> Option<Shape> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, sh)| *sh)
    }
}

/// Saved activations needed by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    extract: StackCache<T>,
    f0: Tensor<T>,
    attention: AttentionCache<T>,
    content: StackCache<T>,
    light: StackCache<T>,
    suppression: EstimatorCache<T>,
    enhancement: EstimatorCache<T>,
}

impl<T: Real> Tape<T> {
    pub fn attention(&self) -> &AttentionCache<T> {
        &self.attention
    }
}

/// Gradients of a scalar objective with respect to the network outputs.
#[derive(Clone, Debug)]
pub struct OutputGrads<T> {
    pub suppression: Tensor<T>,
    pub enhancement: Tensor<T>,
    pub o2: Tensor<T>,
}

/// The full network: feature extraction, decomposition into light and
/// content features, light generation, cross-attention content refinement
/// and two parameter estimation heads.
#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    pub extractor: FeatureExtractor<T>,
    pub decomposition: Conv2d<T>,
    pub attention: CrossAttention<T>,
    pub content_decoder: Decoder<T>,
    pub light_decoder: Decoder<T>,
    pub suppression_head: Estimator<T>,
    pub enhancement_head: Estimator<T>,
}

impl<T: Real> Network<T> {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.attention_dim;
        Ok(Network {
            extractor: FeatureExtractor::new(&config.extractor_channels, &mut rng),
            decomposition: Conv2d::new(c, c, 1, 1, 0, &mut rng),
            attention: CrossAttention::new(c, config.attention_heads, config.ffn_hidden, &mut rng)?,
            content_decoder: Decoder::new(c, &config.decoder_channels, &mut rng),
            light_decoder: Decoder::new(c, &config.decoder_channels, &mut rng),
            suppression_head: Estimator::new(3, config.estimator_channels, &mut rng),
            enhancement_head: Estimator::new(3, config.estimator_channels, &mut rng),
            config,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let s = image.shape();
        if s.c != 3 {
            return Err(Error::shape(format!("expected an RGB batch, got {s}")));
        }
        let d = self.config.downsample();
        if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(d) || !s.w.is_multiple_of(d) {
            return Err(Error::NotDivisible {
                h: s.h,
                w: s.w,
                divisor: d,
            });
        }
        image.ensure_finite("input image")
    }

    /// Encoder only: `F0` of the image batch.
    pub fn feature_extract(&self, image: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(image)?;
        Ok(self.extractor.forward(image, mode)?.output().clone())
    }

    /// Split `F0` into light features `F1 = conv1x1(F0)` and content
    /// features `F2 = F0 - F1`.
    pub fn decompose(&self, f0: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let f1 = self.decomposition.forward(f0)?;
        let f2 = f0.zip_map(&f1, |a, b| a - b)?;
        Ok((f1, f2))
    }

    /// Cross-attention refinement of `F2` guided by `F1`, then the
    /// deconvolution stack back to image resolution (`O1`).
    pub fn content_refine(&self, f2: &Tensor<T>, f1: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (z, _) = self.attention.forward(f2, f1)?;
        Ok(self.content_decoder.forward(&z, mode)?.output().clone())
    }

    /// Light distribution generation from `F1` (`O2`).
    pub fn light_generate(&self, f1: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.light_decoder.forward(f1, mode)?.output().clone())
    }

    pub fn estimate_parameters(&self, input: &Tensor<T>, kind: MapKind) -> Result<ParameterMap<T>> {
        let head = match kind {
            MapKind::Suppression => &self.suppression_head,
            MapKind::Enhancement => &self.enhancement_head,
        };
        Ok(ParameterMap {
            kind,
            data: head.forward(input)?.output().clone(),
        })
    }

    /// Full forward pass. The returned tape feeds [`Network::backward`] and
    /// [`Network::update_running_stats`].
    pub fn forward(&self, image: &Tensor<T>, mode: Mode) -> Result<(ForwardOutput<T>, Tape<T>)> {
        self.check_input(image)?;
        let mut stages = Vec::new();
        let extract = self.extractor.forward(image, mode)?;
        let n_stages = self.config.extractor_channels.len();
        for (i, t) in extract.outputs().enumerate() {
            let stage = if i + 1 == n_stages {
                Stage::F0
            } else {
                Stage::Extract(i + 1)
            };
            stages.push((stage, t.shape()));
        }
        let f0 = extract.output().clone();
        let (f1, f2) = self.decompose(&f0)?;
        stages.push((Stage::F1, f1.shape()));
        stages.push((Stage::F2, f2.shape()));

        let light = self.light_decoder.forward(&f1, mode)?;
        for (i, t) in light.outputs().enumerate() {
            let stage = if i + 1 == n_stages {
                Stage::O2
            } else {
                Stage::LightDecode(i + 1)
            };
            stages.push((stage, t.shape()));
        }

        let (refined, attention) = self.attention.forward(&f2, &f1)?;
        stages.push((Stage::Refined, refined.shape()));
        let content = self.content_decoder.forward(&refined, mode)?;
        for (i, t) in content.outputs().enumerate() {
            let stage = if i + 1 == n_stages {
                Stage::O1
            } else {
                Stage::ContentDecode(i + 1)
            };
            stages.push((stage, t.shape()));
        }

        let o2 = light.output().clone();
        let o1 = content.output().clone();
        let suppression = self.suppression_head.forward(&o2)?;
        let enhancement = self.enhancement_head.forward(&o1)?;
        for (kind, cache) in [
            (MapKind::Suppression, &suppression),
            (MapKind::Enhancement, &enhancement),
        ] {
            let [c1, c2, c3, cat32, c4, cat41, out] = cache.stages();
            stages.push((Stage::Head(kind, 1), c1.shape()));
            stages.push((Stage::Head(kind, 2), c2.shape()));
            stages.push((Stage::Head(kind, 3), c3.shape()));
            stages.push((Stage::HeadConcat(kind, 4), cat32.shape()));
            stages.push((Stage::Head(kind, 4), c4.shape()));
            stages.push((Stage::HeadConcat(kind, 5), cat41.shape()));
            stages.push((Stage::Map(kind), out.shape()));
        }

        let out = ForwardOutput {
            suppression: ParameterMap {
                kind: MapKind::Suppression,
                data: suppression.output().clone(),
            },
            enhancement: ParameterMap {
                kind: MapKind::Enhancement,
                data: enhancement.output().clone(),
            },
            o2,
            o1,
            stages,
        };
        let tape = Tape {
            extract,
            f0,
            attention,
            content,
            light,
            suppression,
            enhancement,
        };
        Ok((out, tape))
    }

    /// Backpropagate output gradients, accumulating into every parameter's
    /// gradient. Returns the gradient with respect to the input image.
    pub fn backward(&mut self, tape: &Tape<T>, grads: &OutputGrads<T>) -> Result<Tensor<T>> {
        let mut d_o2 = self
            .suppression_head
            .backward(&tape.suppression, &grads.suppression)?;
        d_o2.add_assign(&grads.o2);
        let d_f1_light = self.light_decoder.backward(&tape.light, &d_o2)?;

        let d_o1 = self
            .enhancement_head
            .backward(&tape.enhancement, &grads.enhancement)?;
        let d_refined = self.content_decoder.backward(&tape.content, &d_o1)?;
        let (d_f2, mut d_f1) = self.attention.backward(&tape.attention, &d_refined);
        d_f1.add_assign(&d_f1_light);

        // F1 = D(F0), F2 = F0 - F1
        let d_through = d_f1.zip_map(&d_f2, |a, b| a - b)?;
        let mut d_f0 = self.decomposition.backward(&tape.f0, &d_through)?;
        d_f0.add_assign(&d_f2);
        self.extractor.backward(&tape.extract, &d_f0)
    }

    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        self.extractor.update_running_stats(&tape.extract);
        self.light_decoder.update_running_stats(&tape.light);
        self.content_decoder.update_running_stats(&tape.content);
    }

    /// Copy every parameter from a network of the same architecture,
    /// possibly of a different scalar type.
    pub fn load_params_from<U: Real>(&mut self, other: &Network<U>) -> Result<()> {
        let mut values: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        other.visit("", &mut |name, p| {
            values.insert(
                name.to_string(),
                (p.dims.clone(), p.value.iter().map(|v| v.to_f64().unwrap()).collect()),
            );
        });
        let mut err = None;
        self.visit_mut("", &mut |name, p| match values.get(name) {
            Some((dims, v)) if *dims == p.dims => {
                p.value = v.iter().map(|&x| T::lit(x)).collect();
            }
            _ => {
                err.get_or_insert_with(|| Error::shape(format!("parameter {name} does not match")));
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Every parameter and batch-norm buffer as 32-bit arrays.
    pub fn to_archive(&self) -> WeightArchive {
        let mut out = WeightArchive::new();
        self.visit("", &mut |name, p| {
            let data = p.value.iter().map(|v| v.to_f32().unwrap()).collect();
            out.push(name, p.dims.clone(), data).expect("unique parameter names");
        });
        out
    }

    /// Overwrite parameters from an archive. Every parameter must be present
    /// with matching dims; extra entries are rejected.
    pub fn load_archive(&mut self, archive: &WeightArchive) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        self.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match archive.get(name) {
                Some(e) if e.dims == p.dims => {
                    p.value = e.data.iter().map(|&v| T::lit(v as f64)).collect();
                    seen += 1;
                }
                Some(e) => {
                    err = Some(Error::Archive(format!(
                        "entry {name} has dims {:?}, expected {:?}",
                        e.dims, p.dims
                    )))
                }
                None => err = Some(Error::Archive(format!("missing entry {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != archive.len() {
            return Err(Error::Archive(format!(
                "archive has {} entries but the network has {seen} parameters",
                archive.len()
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut out = Network::<U>::new(self.config.clone()).expect("validated config");
        out.load_params_from(self).expect("same architecture");
        out
    }
}

impl<T: Real> Module<T> for Network<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        use crate::nn::join;
        self.extractor.visit(&join(prefix, "extractor"), f);
        self.decomposition.visit(&join(prefix, "decomposition"), f);
        self.attention.visit(&join(prefix, "attention"), f);
        self.content_decoder.visit(&join(prefix, "content_decoder"), f);
        self.light_decoder.visit(&join(prefix, "light_decoder"), f);
        self.suppression_head.visit(&join(prefix, "suppression_head"), f);
        self.enhancement_head.visit(&join(prefix, "enhancement_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        use crate::nn::join;
        self.extractor.visit_mut(&join(prefix, "extractor"), f);
        self.decomposition.visit_mut(&join(prefix, "decomposition"), f);
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.content_decoder.visit_mut(&join(prefix, "content_decoder"), f);
        self.light_decoder.visit_mut(&join(prefix, "light_decoder"), f);
        self.suppression_head.visit_mut(&join(prefix, "suppression_head"), f);
        self.enhancement_head.visit_mut(&join(prefix, "enhancement_head"), f);
    }
}
