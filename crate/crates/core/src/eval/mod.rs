//! One-pass evaluation of tracker outputs: centre error precision,
//! normalised precision, success AUC and relative improvements.

mod io;
mod metrics;
mod plot;

pub use io::{load_records, parse_boxes, read_attributes, read_boxes};
pub use metrics::{
    cle, format_delta, improvement_delta, iou, norm_precision_thresholds, normalized_cle, ope_metrics,
    precision_thresholds, success_thresholds, Box, Curve, MetricReport, TrackRecord,
    NORM_PRECISION_THRESHOLD, PRECISION_THRESHOLD,
};
pub use plot::{emit_plots, read_curve_csv, render_svg, PlotKind};

use serde::{Deserialize, Serialize};

/// Options of the `eval` section of the application config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Box files use 1-based pixel coordinates.
    pub one_based: bool,
}
