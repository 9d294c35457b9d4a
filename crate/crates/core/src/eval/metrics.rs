use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box with top-left corner `(x, y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Box {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Box { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// All-zero boxes mark frames without ground truth.
    pub fn is_absent(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.w == 0.0 && self.h == 0.0
    }
}

/// Centre location error in pixels.
pub fn cle(pred: &Box, gt: &Box) -> f64 {
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    (px - gx).hypot(py - gy)
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Box, b: &Box) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Centre error with each axis scaled by the ground-truth size.
pub fn normalized_cle(pred: &Box, gt: &Box) -> f64 {
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    if gt.w <= 0.0 || gt.h <= 0.0 {
        return f64::INFINITY;
    }
    ((px - gx) / gt.w).hypot((py - gy) / gt.h)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub sequence: String,
    pub predictions: Vec<Box>,
    pub ground_truth: Vec<Box>,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl TrackRecord {
    pub fn validate(&self) -> Result<()> {
        if self.predictions.len() != self.ground_truth.len() {
            return Err(Error::Sequence {
                sequence: self.sequence.clone(),
                message: format!(
                    "{} predicted boxes but {} ground-truth boxes",
                    self.predictions.len(),
                    self.ground_truth.len()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    /// Trapezoidal area divided by the threshold range.
    pub fn auc(&self) -> f64 {
        let span = self.thresholds.last().unwrap_or(&0.0) - self.thresholds.first().unwrap_or(&0.0);
        if span <= 0.0 {
            return 0.0;
        }
        let area: f64 = self
            .thresholds
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| (t[1] - t[0]) * (v[0] + v[1]) / 2.0)
            .sum();
        area / span
    }

    pub fn value_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-9)
            .map(|i| self.values[i])
    }
}

/// Threshold grids and headline thresholds.
pub const PRECISION_THRESHOLD: f64 = 20.0;
pub const NORM_PRECISION_THRESHOLD: f64 = 0.2;

pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(f64::from).collect()
}

pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

pub fn norm_precision_thresholds() -> Vec<f64> {
    (0..=50).map(|i| i as f64 * 0.01).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sequences: usize,
    /// Frames scored (frames without ground truth are skipped).
    pub frames: usize,
    /// Fraction of frames with centre error below 20 pixels.
    pub precision: f64,
    pub precision_curve: Curve,
    /// Fraction of frames with normalised centre error below 0.2.
    pub norm_precision: f64,
    pub norm_precision_auc: f64,
    pub norm_precision_curve: Curve,
    pub success_auc: f64,
    pub success_curve: Curve,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, MetricReport>,
}

struct SequenceCurves {
    frames: usize,
    precision: Vec<f64>,
    norm: Vec<f64>,
    success: Vec<f64>,
}

fn fraction(values: &[f64], thresholds: &[f64], pass: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let n = values.len() as f64;
    thresholds
        .iter()
        .map(|&t| values.iter().filter(|&&v| pass(v, t)).count() as f64 / n)
        .collect()
}

fn sequence_curves(r: &TrackRecord) -> Result<Option<SequenceCurves>> {
    r.validate()?;
    let mut errors = Vec::new();
    let mut norm = Vec::new();
    let mut overlaps = Vec::new();
    for (p, g) in r.predictions.iter().zip(&r.ground_truth) {
        if g.is_absent() {
            continue;
        }
        errors.push(cle(p, g));
        norm.push(normalized_cle(p, g));
        overlaps.push(iou(p, g));
    }
    if errors.is_empty() {
        return Ok(None);
    }
    Ok(Some(SequenceCurves {
        frames: errors.len(),
        precision: fraction(&errors, &precision_thresholds(), |v, t| v < t),
        norm: fraction(&norm, &norm_precision_thresholds(), |v, t| v < t),
        success: fraction(&overlaps, &success_thresholds(), |v, t| v > t),
    }))
}

fn mean_curve(thresholds: Vec<f64>, curves: &[&[f64]]) -> Curve {
    let n = curves.len() as f64;
    let values = (0..thresholds.len())
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n)
        .collect();
    Curve { thresholds, values }
}

fn aggregate(records: &[&TrackRecord]) -> Result<MetricReport> {
    let mut per = Vec::new();
    for r in records {
        if let Some(c) = sequence_curves(r)? {
            per.push(c);
        }
    }
    if per.is_empty() {
        return Err(Error::InvalidArgument("no sequence has any ground-truth frame".into()));
    }
    let precision_curve = mean_curve(
        precision_thresholds(),
        &per.iter().map(|c| c.precision.as_slice()).collect::<Vec<_>>(),
    );
    let norm_precision_curve = mean_curve(
        norm_precision_thresholds(),
        &per.iter().map(|c| c.norm.as_slice()).collect::<Vec<_>>(),
    );
    let success_curve = mean_curve(
        success_thresholds(),
        &per.iter().map(|c| c.success.as_slice()).collect::<Vec<_>>(),
    );
    Ok(MetricReport {
        sequences: per.len(),
        frames: per.iter().map(|c| c.frames).sum(),
        precision: precision_curve.value_at(PRECISION_THRESHOLD).unwrap(),
        norm_precision: norm_precision_curve.value_at(NORM_PRECISION_THRESHOLD).unwrap(),
        norm_precision_auc: norm_precision_curve.auc(),
        success_auc: success_curve.auc(),
        precision_curve,
        norm_precision_curve,
        success_curve,
        attributes: BTreeMap::new(),
    })
}

/// One-pass evaluation over all records, with one sub-report per
/// attribute tag.
pub fn ope_metrics(records: &[TrackRecord]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no track records".into()));
    }
    let all: Vec<&TrackRecord> = records.iter().collect();
    let mut report = aggregate(&all)?;
    let mut tags: Vec<&String> = records.iter().flat_map(|r| &r.attributes).collect();
    tags.sort();
    tags.dedup();
    for tag in tags {
        let subset: Vec<&TrackRecord> = records.iter().filter(|r| r.attributes.contains(tag)).collect();
        if let Ok(sub) = aggregate(&subset) {
            report.attributes.insert(tag.clone(), sub);
        }
    }
    Ok(report)
}

/// Relative change in percent, `100 * (enhanced - base) / base`.
pub fn improvement_delta(base: f64, enhanced: f64) -> Result<f64> {
    if !(base > 0.0) || !enhanced.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "improvement needs a positive base score, got {base}"
        )));
    }
    Ok(100.0 * (enhanced - base) / base)
}

/// Three-decimal rendering used in result tables.
pub fn format_delta(delta: f64) -> String {
    format!("{delta:.3}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cle_values() {
        let a = Box::new(-1.0, -1.0, 2.0, 2.0);
        let b = Box::new(2.0, 3.0, 2.0, 2.0);
        assert_eq!(cle(&a, &a), 0.0);
        assert_eq!(cle(&a, &b), 5.0);
        assert_eq!(cle(&Box::new(5.0, 5.0, 10.0, 10.0), &Box::new(5.0, 25.0, 10.0, 10.0)), 20.0);
    }

    #[test]
    fn iou_values() {
        let a = Box::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Box::new(20.0, 0.0, 10.0, 10.0)), 0.0);
        assert!((iou(&a, &Box::new(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&Box::default(), &Box::default()), 0.0);
    }

    #[test]
    fn deltas() {
        assert_eq!(format_delta(improvement_delta(0.372, 0.434).unwrap()), "16.667");
        assert_eq!(format_delta(improvement_delta(0.474, 0.560).unwrap()), "18.143");
        assert_eq!(improvement_delta(0.5, 0.5).unwrap(), 0.0);
        assert!(improvement_delta(0.0, 0.5).is_err());
        assert!(improvement_delta(-1.0, 0.5).is_err());
    }

    #[test]
    fn perfect_tracker() {
        let gt: Vec<Box> = (0..10).map(|i| Box::new(i as f64, 3.0, 20.0, 10.0)).collect();
        let r = TrackRecord {
            sequence: "s".into(),
            predictions: gt.clone(),
            ground_truth: gt,
            attributes: vec!["IV".into()],
        };
        let m = ope_metrics(&[r]).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.norm_precision, 1.0);
        // IoU = 1 is not strictly above the last threshold, so the final
        // trapezoid contributes half a step.
        assert!((m.success_auc - 0.975).abs() < 1e-12);
        assert_eq!(m.attributes["IV"].frames, 10);
    }

    #[test]
    fn displaced_tracker_and_skipped_frames() {
        let gt = vec![Box::new(0.0, 0.0, 10.0, 10.0), Box::default()];
        let pred = vec![Box::new(25.0, 0.0, 10.0, 10.0), Box::new(1.0, 1.0, 1.0, 1.0)];
        let m = ope_metrics(&[TrackRecord {
            sequence: "d".into(),
            predictions: pred,
            ground_truth: gt,
            attributes: vec![],
        }])
        .unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.frames, 1);
    }

    #[test]
    fn length_mismatch_names_sequence() {
        let r = TrackRecord {
            sequence: "car7".into(),
            predictions: vec![Box::default()],
            ground_truth: vec![],
            attributes: vec![],
        };
        let e = ope_metrics(&[r]).unwrap_err().to_string();
        assert!(e.contains("car7"), "{e}");
    }
}
