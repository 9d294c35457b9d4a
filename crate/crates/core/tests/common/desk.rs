//! Desk-scale corpora and configs.

use std::path::Path;

use ldenhancer::config::AppConfig;
use ldenhancer::train::{synth, DatasetIndex};

/// Write `count` synthetic scenes of side `size` under `root/data`, cache
/// their labels in `root/labels`, and return a config for training on
/// them with the default hyperparameters (stride 1, so every frame is
/// used).
pub fn prepare(root: &Path, count: usize, size: usize, corpus_seed: u64) -> (AppConfig, DatasetIndex) {
    let data = root.join("data");
    synth::write_synthetic_corpus(&data, count, size, corpus_seed).unwrap();
    let mut cfg = AppConfig::default();
    cfg.network.input_size = size;
    cfg.train.input_size = size;
    cfg.train.sample_stride = 1;
    cfg.train.dataset_root = data.clone();
    cfg.train.label_cache = root.join("labels");
    cfg.train.out_dir = root.join("run");
    let index = DatasetIndex::scan(&data, 1, &cfg.train.label_cache).unwrap();
    index.populate_labels(size, cfg.train.lambda_smooth, false).unwrap();
    (cfg, index)
}

pub fn with_out(cfg: &AppConfig, out: &Path) -> AppConfig {
    let mut c = cfg.clone();
    c.train.out_dir = out.to_path_buf();
    c
}
