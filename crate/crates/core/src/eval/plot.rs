use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{Curve, MetricReport};
use crate::error::{Error, Result};

const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Precision,
    NormPrecision,
    Success,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Precision, PlotKind::NormPrecision, PlotKind::Success];

    pub fn file_stem(self) -> &'static str {
        match self {
            PlotKind::Precision => "precision",
            PlotKind::NormPrecision => "norm_precision",
            PlotKind::Success => "success",
        }
    }

    fn curve(self, r: &MetricReport) -> &Curve {
        match self {
            PlotKind::Precision => &r.precision_curve,
            PlotKind::NormPrecision => &r.norm_precision_curve,
            PlotKind::Success => &r.success_curve,
        }
    }

    fn score(self, r: &MetricReport) -> f64 {
        match self {
            PlotKind::Precision => r.precision,
            PlotKind::NormPrecision => r.norm_precision,
            PlotKind::Success => r.success_auc,
        }
    }

    fn labels(self) -> (&'static str, &'static str, &'static str) {
        match self {
            PlotKind::Precision => ("Precision plots of OPE", "Location error threshold", "Precision"),
            PlotKind::NormPrecision => (
                "Normalized precision plots of OPE",
                "Normalized location error threshold",
                "Normalized precision",
            ),
            PlotKind::Success => ("Success plots of OPE", "Overlap threshold", "Success rate"),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Overlay every report's curve of one kind in an SVG document.
pub fn render_svg(kind: PlotKind, reports: &[(String, MetricReport)]) -> String {
    let (w, h) = (560.0, 420.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let thresholds = reports
        .first()
        .map(|(_, r)| kind.curve(r).thresholds.clone())
        .unwrap_or_default();
    let t0 = thresholds.first().copied().unwrap_or(0.0);
    let t1 = thresholds.last().copied().unwrap_or(1.0).max(t0 + f64::EPSILON);
    let sx = |t: f64| left + (t - t0) / (t1 - t0) * pw;
    let sy = |v: f64| top + (1.0 - v) * ph;
    let (title, xlabel, ylabel) = kind.labels();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
        let t = t0 + v * (t1 - t0);
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 16.0,
            trim_number(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{ylabel}</text>"#,
        top + ph / 2.0
    );
    for (i, (label, report)) in reports.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let c = kind.curve(report);
        let pts: Vec<String> = c
            .thresholds
            .iter()
            .zip(&c.values)
            .map(|(&t, &v)| format!("{:.2},{:.2}", sx(t), sy(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 16.0 + 18.0 * i as f64;
        let lx = if kind == PlotKind::Success { left + 10.0 } else { left + pw - 200.0 };
        let ly = if kind == PlotKind::Success { top + ph - 18.0 * (reports.len() - i) as f64 } else { ly + ph / 2.0 };
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{} [{:.3}]</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(label),
            kind.score(report)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Write `<kind>.csv` and `<kind>.svg` for the three curve kinds. The CSV
/// has a `threshold` column followed by one column per report.
pub fn emit_plots(reports: &[(String, MetricReport)], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out_dir.as_ref();
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for kind in PlotKind::ALL {
        let csv_path = out.join(format!("{}.csv", kind.file_stem()));
        let mut w = csv::Writer::from_path(&csv_path)?;
        let mut header = vec!["threshold".to_string()];
        header.extend(reports.iter().map(|(l, _)| l.clone()));
        w.write_record(&header)?;
        let base = kind.curve(&reports[0].1);
        for (i, t) in base.thresholds.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for (label, r) in reports {
                let c = kind.curve(r);
                if c.thresholds != base.thresholds {
                    return Err(Error::InvalidArgument(format!("report {label} uses a different threshold grid")));
                }
                row.push(c.values[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        written.push(csv_path);

        let svg_path = out.join(format!("{}.svg", kind.file_stem()));
        fs::write(&svg_path, render_svg(kind, reports)).map_err(|e| Error::io(&svg_path, e))?;
        written.push(svg_path);
    }
    Ok(written)
}

/// Read a curve table written by [`emit_plots`].
pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<(String, Curve)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut curves: Vec<(String, Curve)> = labels.into_iter().map(|l| (l, Curve::default())).collect();
    for row in r.records() {
        let row = row?;
        let nums: Vec<f64> = row
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        for (i, (_, c)) in curves.iter_mut().enumerate() {
            c.thresholds.push(nums[0]);
            c.values.push(nums[i + 1]);
        }
    }
    Ok(curves)
}
