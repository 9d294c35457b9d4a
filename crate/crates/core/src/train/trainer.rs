use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetIndex;
use super::optim::AdamW;
use crate::adjust::{interweave_adjust, interweave_backward};
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::image_io::{load_and_resize, save_image};
use crate::label::load_label;
use crate::losses::{evaluate, total_grad, LossInputs, LossReport, LossWeights};
use crate::network::{Network, NetworkConfig, OutputGrads, WeightArchive};
use crate::nn::{Mode, Module};
use crate::tensor::{Real, Shape, Tensor};

/// A stacked mini-batch with its labels.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    /// `I_l`.
    pub light: Tensor<T>,
    /// `I_o`.
    pub content: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.images.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss of a batch without touching any parameter or gradient.
pub fn batch_loss<T: Real>(
    net: &Network<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    mode: Mode,
) -> Result<LossReport> {
    let (out, _) = net.forward(&batch.images, mode)?;
    let trace = interweave_adjust(
        &batch.images,
        &out.suppression.data,
        &out.enhancement.data,
        net.config().iterations,
    )?;
    evaluate(
        &LossInputs {
            enhanced: trace.output(),
            difference: &trace.difference,
            o2: &out.o2,
            light_label: &batch.light,
            content_label: &batch.content,
        },
        weights,
    )
}

/// Forward and backward pass in training mode. Parameter gradients are
/// accumulated (not zeroed first) and batch-norm statistics are committed.
pub fn accumulate_gradients<T: Real>(
    net: &mut Network<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
) -> Result<LossReport> {
    let (out, tape) = net.forward(&batch.images, Mode::Train)?;
    let trace = interweave_adjust(
        &batch.images,
        &out.suppression.data,
        &out.enhancement.data,
        net.config().iterations,
    )?;
    let inputs = LossInputs {
        enhanced: trace.output(),
        difference: &trace.difference,
        o2: &out.o2,
        light_label: &batch.light,
        content_label: &batch.content,
    };
    let report = evaluate(&inputs, weights)?;
    let g = total_grad(&inputs, weights)?;
    let through = interweave_backward(&trace, &g.enhanced);
    let mut suppression = through.suppression;
    let mut enhancement = through.enhancement;
    enhancement.add_assign(&g.difference);
    suppression.add_assign(&g.difference.map(|v| -v));
    net.backward(
        &tape,
        &OutputGrads {
            suppression,
            enhancement,
            o2: g.o2,
        },
    )?;
    net.update_running_stats(&tape);
    Ok(report)
}

/// One optimiser update on a batch. Returns the loss before the update.
pub fn train_step<T: Real>(
    net: &mut Network<T>,
    opt: &mut AdamW<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
) -> Result<LossReport> {
    net.zero_grad();
    let report = accumulate_gradients(net, batch, weights)?;
    opt.step(net);
    Ok(report)
}

/// Sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub network: NetworkConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: PathBuf,
    pub weights: PathBuf,
    pub optimizer: PathBuf,
}

impl Checkpoint {
    pub fn in_dir(dir: &Path, epoch: usize) -> Self {
        let stem = dir.join(format!("epoch_{epoch:04}"));
        Checkpoint {
            meta: stem.with_extension("json"),
            weights: stem.with_extension("weights"),
            optimizer: stem.with_extension("optim"),
        }
    }

    /// Locate the weights and optimizer files belonging to a sidecar path.
    pub fn from_meta(meta: impl AsRef<Path>) -> Self {
        let meta = meta.as_ref().to_path_buf();
        Checkpoint {
            weights: meta.with_extension("weights"),
            optimizer: meta.with_extension("optim"),
            meta,
        }
    }

    pub fn read_meta(&self) -> Result<CheckpointMeta> {
        let text = fs::read_to_string(&self.meta).map_err(|e| Error::io(&self.meta, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    /// Per-epoch mean losses of the epochs run in this call.
    pub epochs: Vec<(usize, LossReport)>,
    pub log: PathBuf,
    pub weights: PathBuf,
    pub checkpoints: Vec<Checkpoint>,
}

pub const LOG_HEADER: [&str; 7] = ["epoch", "spa", "col", "tv", "ie", "light", "total"];

/// Read a loss log written by [`train`].
pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<(usize, LossReport)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Dataset(format!("{}: malformed row {row:?}", path.display())))
        };
        out.push((
            f(0)? as usize,
            LossReport {
                spa: f(1)?,
                col: f(2)?,
                tv: f(3)?,
                ie: f(4)?,
                light: f(5)?,
                total: f(6)?,
            },
        ));
    }
    Ok(out)
}

fn log_row(epoch: usize, r: &LossReport) -> [String; 7] {
    [
        epoch.to_string(),
        r.spa.to_string(),
        r.col.to_string(),
        r.tv.to_string(),
        r.ie.to_string(),
        r.light.to_string(),
        r.total.to_string(),
    ]
}

/// Open the loss log, keeping only rows up to `keep_through` epochs.
fn open_log(path: &Path, keep_through: usize) -> Result<csv::Writer<File>> {
    let kept = if keep_through > 0 && path.is_file() {
        read_loss_log(path)?
            .into_iter()
            .filter(|(e, _)| *e <= keep_through)
            .collect()
    } else {
        Vec::new()
    };
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(LOG_HEADER)?;
    for (e, r) in &kept {
        w.write_record(log_row(*e, r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(w)
}

/// Load every frame and its cached label into memory.
pub fn load_corpus(index: &DatasetIndex, size: usize) -> Result<Vec<Batch<f32>>> {
    let missing = index.missing_labels();
    if let Some(first) = missing.first() {
        return Err(Error::Dataset(format!(
            "{} frames have no cached light label (first: {}); run the label step first",
            missing.len(),
            first.label.display()
        )));
    }
    if index.is_empty() {
        return Err(Error::Dataset("dataset index is empty".into()));
    }
    let expect = Shape::new(1, size, size, 3);
    index
        .entries
        .iter()
        .map(|e| {
            let images = load_and_resize(&e.frame, size)?;
            let (light, content) = load_label(&e.label)?;
            if light.shape() != expect || content.shape() != expect {
                return Err(Error::Dataset(format!(
                    "{}: label shape {} does not match training size {size}; recompute labels",
                    e.label.display(),
                    light.shape()
                )));
            }
            Ok(Batch {
                images,
                light,
                content,
            })
        })
        .collect()
}

fn stack(samples: &[&Batch<f32>]) -> Result<Batch<f32>> {
    let part = |f: fn(&Batch<f32>) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        Tensor::stack(&samples.iter().map(|b| f(b).clone()).collect::<Vec<_>>())
    };
    Ok(Batch {
        images: part(|b| &b.images)?,
        light: part(|b| &b.light)?,
        content: part(|b| &b.content)?,
    })
}

/// Sample order for an epoch; depends only on the seed and the epoch.
pub fn epoch_permutation(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn dump_batch(dir: &Path, entries: &[&Path], batch: &Batch<f32>, err: &Error) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..batch.len() {
        save_image(&batch.images, i, dir.join(format!("sample_{i}.png")))?;
    }
    let info = serde_json::json!({
        "error": err.to_string(),
        "frames": entries.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let path = dir.join("batch.json");
    fs::write(&path, serde_json::to_string_pretty(&info)?).map_err(|e| Error::io(&path, e))
}

fn write_checkpoint(
    ckpt: &Checkpoint,
    net: &Network<f32>,
    opt: &AdamW<f32>,
    epoch: usize,
    seed: u64,
) -> Result<()> {
    net.to_archive().save(&ckpt.weights)?;
    opt.to_archive().save(&ckpt.optimizer)?;
    let meta = CheckpointMeta {
        epoch,
        step: opt.step_count(),
        seed,
        network: net.config().clone(),
    };
    fs::write(&ckpt.meta, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&ckpt.meta, e))
}

/// Run (or continue) training. `resume` names a checkpoint sidecar; the
/// run then continues from the epoch after it and the loss log in
/// `out_dir` is truncated to that epoch before new rows are appended.
pub fn train(cfg: &AppConfig, index: &DatasetIndex, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let tc = &cfg.train;
    let out = &tc.out_dir;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let corpus = load_corpus(index, tc.input_size)?;
    let mut net = Network::<f32>::new(cfg.network.clone())?;
    let mut opt = AdamW::new(&net, tc.learning_rate, tc.weight_decay);
    let mut start = 1;
    if let Some(meta_path) = resume {
        let ckpt = Checkpoint::from_meta(meta_path);
        let meta = ckpt.read_meta()?;
        if meta.seed != tc.seed {
            return Err(Error::InvalidConfig(format!(
                "checkpoint seed {} differs from configured seed {}",
                meta.seed, tc.seed
            )));
        }
        if meta.network != cfg.network {
            return Err(Error::InvalidConfig("checkpoint network config differs from the configured one".into()));
        }
        net.load_archive(&WeightArchive::load(&ckpt.weights)?)?;
        opt.load_archive(&WeightArchive::load(&ckpt.optimizer)?, meta.step)?;
        start = meta.epoch + 1;
        log::info!("resuming after epoch {} (step {})", meta.epoch, meta.step);
    }

    let log_path = out.join("loss_log.csv");
    let mut log = open_log(&log_path, start - 1)?;
    let mut summary = TrainSummary {
        epochs: Vec::new(),
        log: log_path.clone(),
        weights: out.join("weights.bin"),
        checkpoints: Vec::new(),
    };

    for epoch in start..=tc.epochs {
        let order = epoch_permutation(tc.seed, epoch, corpus.len());
        let mut sum = [0.0f64; 6];
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let samples: Vec<&Batch<f32>> = chunk.iter().map(|&i| &corpus[i]).collect();
            let batch = stack(&samples)?;
            let report = match train_step(&mut net, &mut opt, &batch, &cfg.loss) {
                Ok(r) => r,
                Err(err @ Error::NonFinite(_)) => {
                    let dir = out.join("nonfinite").join(format!("epoch_{epoch:04}_batch_{b:05}"));
                    let frames: Vec<&Path> = chunk.iter().map(|&i| index.entries[i].frame.as_path()).collect();
                    dump_batch(&dir, &frames, &batch, &err)?;
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {epoch}, batch {b} ({err}); batch dumped to {}",
                        dir.display()
                    )));
                }
                Err(e) => return Err(e),
            };
            let k = chunk.len() as f64;
            for (s, v) in sum.iter_mut().zip(report.parts().iter().chain([&report.total])) {
                *s += k * v;
            }
        }
        let n = corpus.len() as f64;
        let mean = LossReport {
            spa: sum[0] / n,
            col: sum[1] / n,
            tv: sum[2] / n,
            ie: sum[3] / n,
            light: sum[4] / n,
            total: sum[5] / n,
        };
        log.write_record(log_row(epoch, &mean))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        log::info!("epoch {epoch}: total {:.6}", mean.total);
        summary.epochs.push((epoch, mean));

        if epoch % tc.checkpoint_every == 0 || epoch == tc.epochs {
            let ckpt = Checkpoint::in_dir(&ckpt_dir, epoch);
            write_checkpoint(&ckpt, &net, &opt, epoch, tc.seed)?;
            summary.checkpoints.push(ckpt);
        }
    }
    net.to_archive().save(&summary.weights)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_depends_on_epoch_only() {
        let a = epoch_permutation(7, 3, 20);
        assert_eq!(a, epoch_permutation(7, 3, 20));
        assert_ne!(a, epoch_permutation(7, 4, 20));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn log_rows_round_trip_exactly() {
        let t = tempfile::tempdir().unwrap();
        let p = t.path().join("log.csv");
        let r = LossReport {
            spa: 0.1 + 0.2,
            col: 1e-17,
            tv: std::f64::consts::PI,
            ie: 0.18,
            light: 2.0 / 3.0,
            total: 123456.789012345,
        };
        let mut w = open_log(&p, 0).unwrap();
        w.write_record(log_row(1, &r)).unwrap();
        w.write_record(log_row(2, &r)).unwrap();
        drop(w);
        let back = read_loss_log(&p).unwrap();
        assert_eq!(back, vec![(1, r), (2, r)]);
        drop(open_log(&p, 1).unwrap());
        assert_eq!(read_loss_log(&p).unwrap(), vec![(1, r)]);
    }
}
