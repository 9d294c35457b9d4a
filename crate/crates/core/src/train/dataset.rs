use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image_io::load_and_resize;
use crate::label::{light_label, save_label};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_children(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if keep(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Frames `0, stride, 2 * stride, ...` of a directory, in filename order.
pub fn sample_frames(sequence_dir: impl AsRef<Path>, stride: usize) -> Result<Vec<PathBuf>> {
    let dir = sequence_dir.as_ref();
    if stride == 0 {
        return Err(Error::InvalidArgument("sample stride must be positive".into()));
    }
    let frames = sorted_children(dir, is_image)?;
    if frames.is_empty() {
        return Err(Error::Dataset(format!("{} contains no frames", dir.display())));
    }
    Ok(frames.into_iter().step_by(stride).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub sequence: String,
    pub frame: PathBuf,
    pub label: PathBuf,
}

/// Sampled training frames with their label cache paths, sorted by
/// sequence and frame name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
}

impl DatasetIndex {
    /// Index `root`. Each subdirectory is a sequence; if there are none the
    /// root itself is treated as a single sequence named `root`.
    pub fn scan(root: impl AsRef<Path>, stride: usize, label_cache: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let cache = label_cache.as_ref();
        let dirs = sorted_children(root, |p| p.is_dir())?;
        let sequences: Vec<(String, PathBuf)> = if dirs.is_empty() {
            vec![("root".to_string(), root.to_path_buf())]
        } else {
            dirs.into_iter()
                .map(|d| (d.file_name().unwrap().to_string_lossy().into_owned(), d))
                .collect()
        };
        let mut entries = Vec::new();
        for (sequence, dir) in sequences {
            for frame in sample_frames(&dir, stride)? {
                let stem = frame.file_stem().unwrap().to_string_lossy().into_owned();
                let label = cache.join(&sequence).join(format!("{stem}.ldl"));
                entries.push(DatasetEntry {
                    sequence: sequence.clone(),
                    frame,
                    label,
                });
            }
        }
        Ok(DatasetIndex { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose label file does not exist yet.
    pub fn missing_labels(&self) -> Vec<&DatasetEntry> {
        self.entries.iter().filter(|e| !e.label.is_file()).collect()
    }

    /// Compute and cache labels for every entry at `size x size`. Existing
    /// files are recomputed only if `overwrite` is set. Returns the number
    /// of labels written.
    pub fn populate_labels(&self, size: usize, lambda: f64, overwrite: bool) -> Result<usize> {
        let mut written = 0;
        for e in &self.entries {
            if e.label.is_file() && !overwrite {
                continue;
            }
            let img = load_and_resize(&e.frame, size)?;
            let pair = light_label(&img, lambda)?;
            if let Some(dir) = e.label.parent() {
                fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
            }
            save_label(&pair, &e.label)?;
            log::debug!("label {} -> {}", e.frame.display(), e.label.display());
            written += 1;
        }
        Ok(written)
    }
}
