//! Synthetic night scenes for desk-scale training: dim textured content
//! under a sloped ambient level, plus a few glowing light sources.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_io::save_image;
use crate::tensor::{Shape, Tensor};

pub fn uneven_light_scene(size: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let s = size as f32;
    let bg: [f32; 3] = [rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6)];
    let rects: Vec<([f32; 4], [f32; 3])> = (0..rng.gen_range(3..7))
        .map(|_| {
            let x0 = rng.gen_range(0.0..s * 0.8);
            let y0 = rng.gen_range(0.0..s * 0.8);
            let w = rng.gen_range(s * 0.1..s * 0.5);
            let h = rng.gen_range(s * 0.1..s * 0.5);
            let c = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
            ([x0, y0, x0 + w, y0 + h], c)
        })
        .collect();
    let freq = rng.gen_range(0.05..0.3f32);
    let gain = rng.gen_range(0.08..0.25f32);
    let slope = [rng.gen_range(-0.5..0.5f32), rng.gen_range(-0.5..0.5f32)];
    let lights: Vec<(f32, f32, f32, f32, [f32; 3])> = (0..rng.gen_range(1..4))
        .map(|_| {
            let warm = rng.gen_range(0.6..1.0f32);
            (
                rng.gen_range(0.0..s),
                rng.gen_range(0.0..s),
                rng.gen_range(s * 0.05..s * 0.2),
                rng.gen_range(0.5..0.95f32),
                [1.0, warm, warm * rng.gen_range(0.5..1.0)],
            )
        })
        .collect();
    Tensor::from_fn(Shape::new(1, size, size, 3), |_, y, x, c| {
        let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
        let mut v = bg[c];
        for (r, col) in &rects {
            if fx >= r[0] && fx < r[2] && fy >= r[1] && fy < r[3] {
                v = col[c];
            }
        }
        v *= 0.85 + 0.15 * (freq * fx).sin() * (freq * fy).cos();
        let ambient = gain * (1.0 + slope[0] * (fx / s - 0.5) + slope[1] * (fy / s - 0.5));
        let mut out = v * ambient;
        for (lx, ly, sigma, amp, tint) in &lights {
            let d2 = (fx - lx).powi(2) + (fy - ly).powi(2);
            out += amp * tint[c] * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        out.clamp(0.0, 1.0)
    })
}

/// Write `count` scenes as `dir/frame_00000.png`, ... and return their paths.
pub fn write_synthetic_corpus(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let p = dir.join(format!("frame_{i:05}.png"));
            save_image(&uneven_light_scene(size, &mut rng), 0, &p)?;
            Ok(p)
        })
        .collect()
}
