//! COCO-protocol average precision.
//!
//! Per category: detections of each image are sorted by score and greedily
//! matched to the unmatched ground truth with the highest overlap, provided
//! the overlap is at least the IoU threshold. Matches from all images are
//! then pooled, sorted by score, and AP is the mean interpolated precision at
//! the 101 recall points `0.00, 0.01, ..., 1.00`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_to_bbox, BBox, IndexedMask};
use crate::merging::Detection;
use crate::tensor_io::InstanceAnnotation;

pub const DEFAULT_MAX_DETS: usize = 100;
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Bbox,
    Mask,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Bbox => "bbox",
            EvalMode::Mask => "mask",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bbox" => Ok(EvalMode::Bbox),
            "mask" | "segm" => Ok(EvalMode::Mask),
            other => Err(Error::Config(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

/// IoU thresholds `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Detections and ground truth for one image.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub image_id: u64,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_category: BTreeMap<u32, CategoryAp>,
    pub mean_ap: f64,
    pub mean_ap50: f64,
    pub mean_ap75: f64,
}

/// Overlap geometry of one detection or ground-truth instance.
enum Shape {
    Box(BBox),
    Mask(IndexedMask),
}

impl Shape {
    fn new(mask: &crate::tensor_io::BinaryMask, bbox: Option<BBox>, mode: EvalMode) -> Result<Self> {
        Ok(match mode {
            EvalMode::Bbox => Shape::Box(match bbox {
                Some(b) => b,
                None => mask_to_bbox(mask)?,
            }),
            EvalMode::Mask => Shape::Mask(IndexedMask::new(mask)?),
        })
    }

    fn iou(&self, other: &Shape) -> f64 {
        match (self, other) {
            (Shape::Box(a), Shape::Box(b)) => a.iou(b),
            (Shape::Mask(a), Shape::Mask(b)) => a.iou(b),
            _ => unreachable!("shapes of one evaluation share a mode"),
        }
    }
}

/// One image's worth of same-category detections and ground truth.
pub struct CategoryImage<'a> {
    pub detections: Vec<&'a Detection>,
    pub ground_truth: Vec<&'a InstanceAnnotation>,
}

/// AP of one category at each of `thresholds`; `None` when the category has
/// no ground truth.
pub fn category_ap(
    images: &[CategoryImage<'_>],
    thresholds: &[f64],
    mode: EvalMode,
) -> Result<Option<Vec<f64>>> {
    let num_gt: usize = images.iter().map(|i| i.ground_truth.len()).sum();
    if num_gt == 0 {
        return Ok(None);
    }
    // (score, matched) per threshold, pooled across images in image order.
    let mut pooled: Vec<Vec<(f64, bool)>> = vec![Vec::new(); thresholds.len()];
    for image in images {
        let mut dets = image.detections.clone();
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        let det_shapes: Vec<Shape> = dets
            .iter()
            .map(|d| Shape::new(&d.mask, Some(d.bbox), mode))
            .collect::<Result<_>>()?;
        let gt_shapes: Vec<Shape> = image
            .ground_truth
            .iter()
            .map(|g| Shape::new(&g.mask, None, mode))
            .collect::<Result<_>>()?;
        let ious: Vec<Vec<f64>> = det_shapes
            .iter()
            .map(|d| gt_shapes.iter().map(|g| d.iou(g)).collect())
            .collect();
        for (t, &thresh) in thresholds.iter().enumerate() {
            let mut gt_taken = vec![false; gt_shapes.len()];
            for (d, det) in dets.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (g, &iou) in ious[d].iter().enumerate() {
                    if gt_taken[g] || iou < thresh {
                        continue;
                    }
                    if best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                if let Some((g, _)) = best {
                    gt_taken[g] = true;
                }
                pooled[t].push((det.score, best.is_some()));
            }
        }
    }
    Ok(Some(
        pooled
            .into_iter()
            .map(|mut matches| {
                // Stable: equal scores keep image order.
                matches.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
                interpolated_ap(&matches, num_gt)
            })
            .collect(),
    ))
}

/// 101-point interpolated AP over score-sorted `(score, matched)` pairs.
fn interpolated_ap(sorted: &[(f64, bool)], num_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(sorted.len());
    let mut precision = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, matched) in sorted {
        if matched {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut total = 0.0;
    for j in 0..RECALL_POINTS {
        let r = j as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&rc| rc < r);
        if idx < precision.len() {
            total += precision[idx];
        }
    }
    total / RECALL_POINTS as f64
}

/// AP at a single IoU threshold over `images`, restricted to `category_id`.
pub fn average_precision(
    images: &[EvalImage],
    category_id: u32,
    iou_thresh: f64,
    mode: EvalMode,
) -> Result<Option<f64>> {
    let split = split_category(images, category_id, usize::MAX);
    Ok(category_ap(&split, &[iou_thresh], mode)?.map(|v| v[0]))
}

fn split_category<'a>(
    images: &'a [EvalImage],
    category_id: u32,
    max_dets: usize,
) -> Vec<CategoryImage<'a>> {
    images
        .iter()
        .map(|img| {
            let mut top: Vec<&Detection> = img.detections.iter().collect();
            if top.len() > max_dets {
                top.sort_by(|a, b| {
                    b.score
                        .partial_cmp(&a.score)
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                top.truncate(max_dets);
            }
            CategoryImage {
                detections: top
                    .into_iter()
                    .filter(|d| d.category_id == category_id)
                    .collect(),
                ground_truth: img
                    .ground_truth
                    .iter()
                    .filter(|g| g.category_id == category_id)
                    .collect(),
            }
        })
        .collect()
}

/// COCO-style AP, AP50 and AP75 per category and averaged over categories
/// that have ground truth. At most `max_dets` top-scoring detections per
/// image are considered.
pub fn coco_map(images: &[EvalImage], mode: EvalMode, max_dets: usize) -> Result<EvalReport> {
    let categories: BTreeSet<u32> = images
        .iter()
        .flat_map(|i| i.ground_truth.iter().map(|g| g.category_id))
        .collect();
    let thresholds = iou_thresholds();
    let per_category: Vec<(u32, CategoryAp)> = categories
        .into_par_iter()
        .filter_map(|cat| {
            let split = split_category(images, cat, max_dets);
            match category_ap(&split, &thresholds, mode) {
                Ok(Some(aps)) => Some(Ok((
                    cat,
                    CategoryAp {
                        ap: aps.iter().sum::<f64>() / aps.len() as f64,
                        ap50: aps[0],
                        ap75: aps[5],
                    },
                ))),
                Ok(None) => None,
                Err(e) => Some(Err(e)),
            }
        })
        .collect::<Result<_>>()?;
    let per_category: BTreeMap<u32, CategoryAp> = per_category.into_iter().collect();
    let mean = |f: fn(&CategoryAp) -> f64| {
        if per_category.is_empty() {
            0.0
        } else {
            per_category.values().map(f).sum::<f64>() / per_category.len() as f64
        }
    };
    Ok(EvalReport {
        mode,
        mean_ap: mean(|c| c.ap),
        mean_ap50: mean(|c| c.ap50),
        mean_ap75: mean(|c| c.ap75),
        per_category,
    })
}

impl EvalReport {
    /// `category_id,ap,ap50,ap75` rows, values in `[0, 1]`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category_id", "ap", "ap50", "ap75"])
            .map_err(|e| Error::Config(e.to_string()))?;
        for (cat, c) in &self.per_category {
            w.serialize((cat, c.ap, c.ap50, c.ap75))
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Human-readable summary with values scaled to percent.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} nAP {:.1}  nAP50 {:.1}  nAP75 {:.1}  ({} categories)\n",
            self.mode,
            100.0 * self.mean_ap,
            100.0 * self.mean_ap50,
            100.0 * self.mean_ap75,
            self.per_category.len()
        );
        for (cat, c) in &self.per_category {
            out.push_str(&format!(
                "  category {cat:>4}: AP {:5.1}  AP50 {:5.1}  AP75 {:5.1}\n",
                100.0 * c.ap,
                100.0 * c.ap50,
                100.0 * c.ap75
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::BinaryMask;

    fn gt(mask: BinaryMask, cat: u32, id: u64) -> InstanceAnnotation {
        InstanceAnnotation::new(mask, cat, id).unwrap()
    }

    fn det(mask: BinaryMask, cat: u32, score: f64) -> Detection {
        Detection {
            bbox: mask_to_bbox(&mask).unwrap(),
            mask,
            category_id: cat,
            score,
            raw_score: score,
            source_rank: 0,
        }
    }

    fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::rectangle(20, 20, x0, y0, x1, y1)
    }

    #[test]
    fn thresholds_are_exact_decimals() {
        let t = iou_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[2], 0.6);
        assert_eq!(t[5], 0.75);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn perfect_detections() {
        let images = vec![EvalImage {
            image_id: 1,
            detections: vec![det(rect(0, 0, 5, 5), 0, 0.9), det(rect(10, 10, 15, 15), 1, 0.4)],
            ground_truth: vec![gt(rect(0, 0, 5, 5), 0, 0), gt(rect(10, 10, 15, 15), 1, 1)],
        }];
        for mode in [EvalMode::Bbox, EvalMode::Mask] {
            let r = coco_map(&images, mode, 100).unwrap();
            assert_eq!((r.mean_ap, r.mean_ap50, r.mean_ap75), (1.0, 1.0, 1.0));
        }
        assert_eq!(
            average_precision(&images, 0, 0.5, EvalMode::Mask).unwrap(),
            Some(1.0)
        );
    }

    #[test]
    fn no_detections_is_zero_and_no_gt_is_excluded() {
        let images = vec![EvalImage {
            image_id: 1,
            detections: vec![det(rect(0, 0, 5, 5), 3, 0.9)],
            ground_truth: vec![gt(rect(0, 0, 5, 5), 0, 0)],
        }];
        let r = coco_map(&images, EvalMode::Mask, 100).unwrap();
        assert_eq!(r.per_category.len(), 1);
        assert_eq!(r.per_category[&0].ap, 0.0);
        assert_eq!(average_precision(&images, 3, 0.5, EvalMode::Mask).unwrap(), None);
    }

    #[test]
    fn iou_sweep_counts_up_to_point_six() {
        // GT 10x10, detection covers 6 of its 10 columns: IoU = 60/100.
        let images = vec![EvalImage {
            image_id: 1,
            detections: vec![det(rect(0, 0, 6, 10), 0, 0.9)],
            ground_truth: vec![gt(rect(0, 0, 10, 10), 0, 0)],
        }];
        let r = coco_map(&images, EvalMode::Mask, 100).unwrap();
        assert_eq!(r.mean_ap50, 1.0);
        assert_eq!(r.mean_ap75, 0.0);
        // thresholds 0.50, 0.55, 0.60 hit; 7 of 10 miss
        assert!((r.mean_ap - 0.3).abs() < 1e-12);
    }

    #[test]
    fn false_positive_ranked_first_halves_precision() {
        let images = vec![EvalImage {
            image_id: 1,
            detections: vec![det(rect(10, 10, 15, 15), 0, 0.9), det(rect(0, 0, 5, 5), 0, 0.5)],
            ground_truth: vec![gt(rect(0, 0, 5, 5), 0, 0)],
        }];
        let ap = average_precision(&images, 0, 0.5, EvalMode::Mask)
            .unwrap()
            .unwrap();
        assert!((ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn max_dets_per_image() {
        let mut dets: Vec<Detection> = (0..3).map(|i| det(rect(10, 10, 12, 12), 1, 0.9 - i as f64 * 0.1)).collect();
        dets.push(det(rect(0, 0, 5, 5), 0, 0.1));
        let images = vec![EvalImage {
            image_id: 1,
            detections: dets,
            ground_truth: vec![gt(rect(0, 0, 5, 5), 0, 0)],
        }];
        assert_eq!(coco_map(&images, EvalMode::Mask, 3).unwrap().mean_ap, 0.0);
        assert_eq!(coco_map(&images, EvalMode::Mask, 4).unwrap().mean_ap, 1.0);
    }

    #[test]
    fn csv_and_summary() {
        let images = vec![EvalImage {
            image_id: 1,
            detections: vec![det(rect(0, 0, 5, 5), 2, 0.9)],
            ground_truth: vec![gt(rect(0, 0, 5, 5), 2, 0)],
        }];
        let r = coco_map(&images, EvalMode::Bbox, 100).unwrap();
        assert_eq!(r.to_csv().unwrap(), "category_id,ap,ap50,ap75\n2,1.0,1.0,1.0\n");
        assert!(r.summary().starts_with("bbox nAP 100.0"));
    }
}
