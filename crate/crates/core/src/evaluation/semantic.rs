//! Semantic maps from instance detections and dataset-level mIoU.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersection_area, mask_union};
use crate::merging::Detection;
use crate::tensor_io::{BinaryMask, InstanceAnnotation};

pub const DEFAULT_SEMANTIC_SCORE: f64 = 0.5;

/// Per-class pixel union of all detections scoring at least `score_thresh`.
pub fn semantic_aggregate(
    dets: &[Detection],
    height: usize,
    width: usize,
    score_thresh: f64,
) -> Result<BTreeMap<u32, BinaryMask>> {
    union_by_class(
        dets.iter()
            .filter(|d| d.score >= score_thresh)
            .map(|d| (d.category_id, &d.mask)),
        height,
        width,
    )
}

/// Per-class union of ground-truth instances.
pub fn semantic_ground_truth(
    annotations: &[InstanceAnnotation],
    height: usize,
    width: usize,
) -> Result<BTreeMap<u32, BinaryMask>> {
    union_by_class(
        annotations.iter().map(|a| (a.category_id, &a.mask)),
        height,
        width,
    )
}

fn union_by_class<'a>(
    masks: impl Iterator<Item = (u32, &'a BinaryMask)>,
    height: usize,
    width: usize,
) -> Result<BTreeMap<u32, BinaryMask>> {
    let mut out: BTreeMap<u32, BinaryMask> = BTreeMap::new();
    for (category_id, mask) in masks {
        if mask.height() != height || mask.width() != width {
            return Err(Error::DimMismatch(format!(
                "mask is {}x{}, image is {height}x{width}",
                mask.height(),
                mask.width()
            )));
        }
        let merged = match out.get(&category_id) {
            Some(acc) => mask_union(acc, mask)?,
            None => mask.clone(),
        };
        out.insert(category_id, merged);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub per_category: BTreeMap<u32, f64>,
    pub miou: f64,
}

/// Class IoU from intersections and unions summed over all images, averaged
/// over classes with a non-empty union. `pred` and `gt` are paired by index.
pub fn miou(
    pred: &[BTreeMap<u32, BinaryMask>],
    gt: &[BTreeMap<u32, BinaryMask>],
) -> Result<MiouReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimMismatch(format!(
            "{} predicted maps vs {} ground-truth maps",
            pred.len(),
            gt.len()
        )));
    }
    let mut totals: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        let classes: BTreeSet<u32> = p.keys().chain(g.keys()).copied().collect();
        for c in classes {
            let (inter, union) = match (p.get(&c), g.get(&c)) {
                (Some(a), Some(b)) => {
                    let inter = intersection_area(a, b)?;
                    (inter, a.area() + b.area() - inter)
                }
                (Some(a), None) => (0, a.area()),
                (None, Some(b)) => (0, b.area()),
                (None, None) => unreachable!(),
            };
            let entry = totals.entry(c).or_default();
            entry.0 += inter;
            entry.1 += union;
        }
    }
    let per_category: BTreeMap<u32, f64> = totals
        .into_iter()
        .filter(|(_, (_, u))| *u > 0)
        .map(|(c, (i, u))| (c, i as f64 / u as f64))
        .collect();
    let miou = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().sum::<f64>() / per_category.len() as f64
    };
    Ok(MiouReport { per_category, miou })
}
