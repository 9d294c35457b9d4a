//! Slow reference implementations used as independent oracles.

use ldenhancer::eval::{Box, TrackRecord};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Light label of one channel by a dense solve of
/// `(I + lambda * L^T L) s = r`, where `L` is the graph Laplacian of the
/// 4-connected grid (missing neighbours contribute nothing) and `r` is the
/// channel minus its least-squares plane in raw pixel coordinates.
pub fn dense_light_label(chan: &[f64], h: usize, w: usize, lambda: f64) -> Vec<f64> {
    let n = h * w;
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => (i / w) as f64,
        _ => (i % w) as f64,
    });
    let b = DVector::from_column_slice(chan);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .expect("plane fit");
    let plane = &design * coef;
    let resid = &b - &plane;

    let mut lap = DMatrix::<f64>::zeros(n, n);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut link = |j: usize| {
                lap[(i, j)] += 1.0;
                lap[(i, i)] -= 1.0;
            };
            if y > 0 {
                link(i - w);
            }
            if y + 1 < h {
                link(i + w);
            }
            if x > 0 {
                link(i - 1);
            }
            if x + 1 < w {
                link(i + 1);
            }
        }
    }
    let a = DMatrix::<f64>::identity(n, n) + lap.transpose() * &lap * lambda;
    let smooth = a.cholesky().expect("positive definite").solve(&resid);
    (plane + smooth).iter().copied().collect()
}

/// A synthetic track: predictions jitter around the ground truth, with the
/// first frame equal to it.
pub fn random_record(name: &str, r: &mut impl Rng) -> TrackRecord {
    let frames = r.gen_range(20..120);
    let mut gt = Vec::with_capacity(frames);
    let mut pred = Vec::with_capacity(frames);
    let (mut x, mut y) = (r.gen_range(0.0..400.0), r.gen_range(0.0..300.0));
    let (w, h) = (r.gen_range(8.0..80.0), r.gen_range(8.0..80.0));
    let spread = r.gen_range(0.5..40.0);
    for f in 0..frames {
        x += r.gen_range(-3.0..3.0);
        y += r.gen_range(-3.0..3.0);
        let g = Box::new(x, y, w, h);
        gt.push(g);
        pred.push(if f == 0 {
            g
        } else {
            Box::new(
                x + r.gen_range(-spread..spread),
                y + r.gen_range(-spread..spread),
                (w * r.gen_range(0.6..1.4f64)).max(0.0),
                (h * r.gen_range(0.6..1.4f64)).max(0.0),
            )
        });
    }
    TrackRecord {
        sequence: name.to_string(),
        predictions: pred,
        ground_truth: gt,
        attributes: vec![],
    }
}

fn overlap(a: &Box, b: &Box) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Success AUC as the mean over `steps + 1` equally spaced thresholds in
/// `[0, 1]` of the per-sequence fraction of frames with IoU above the
/// threshold, averaged over sequences.
pub fn brute_force_success_auc(records: &[TrackRecord], steps: usize) -> f64 {
    let per_seq: Vec<f64> = records
        .iter()
        .map(|r| {
            let ious: Vec<f64> = r
                .predictions
                .iter()
                .zip(&r.ground_truth)
                .map(|(p, g)| overlap(p, g))
                .collect();
            let total: f64 = (0..=steps)
                .map(|k| {
                    let t = k as f64 / steps as f64;
                    ious.iter().filter(|&&v| v > t).count() as f64 / ious.len() as f64
                })
                .sum();
            total / (steps + 1) as f64
        })
        .collect();
    per_seq.iter().sum::<f64>() / per_seq.len() as f64
}

/// Direct scores of a one-frame record: precision at 20 px, normalised
/// precision at 0.2, and the 21-point trapezoid success AUC.
pub fn single_frame_scores(pred: &Box, gt: &Box) -> (f64, f64, f64) {
    let (px, py) = (pred.x + pred.w / 2.0, pred.y + pred.h / 2.0);
    let (gx, gy) = (gt.x + gt.w / 2.0, gt.y + gt.h / 2.0);
    let dist = ((px - gx).powi(2) + (py - gy).powi(2)).sqrt();
    let ndist = (((px - gx) / gt.w).powi(2) + ((py - gy) / gt.h).powi(2)).sqrt();
    let ov = overlap(pred, gt);
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let ts: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
    let auc = ts
        .windows(2)
        .map(|t| (t[1] - t[0]) * (ind(ov > t[0]) + ind(ov > t[1])) / 2.0)
        .sum::<f64>();
    (ind(dist < 20.0), ind(ndist < 0.2), auc)
}
