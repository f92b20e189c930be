//! COCO-style AP, semantic mIoU and reference-set variance statistics.

mod coco;
mod semantic;
mod variance;

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use coco::{
    average_precision, category_ap, coco_map, iou_thresholds, CategoryAp, CategoryImage,
    EvalImage, EvalMode, EvalReport, DEFAULT_MAX_DETS, RECALL_POINTS,
};
pub use semantic::{
    miou, semantic_aggregate, semantic_ground_truth, MiouReport, DEFAULT_SEMANTIC_SCORE,
};
pub use variance::{mean_std, run_once, variance_study, VarianceConfig, VarianceReport};

/// Writes any report as pretty JSON.
pub fn write_json_report(path: impl AsRef<Path>, report: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
