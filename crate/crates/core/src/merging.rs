//! Duplicate handling after matching: NMS, then semantic-aware soft merging.
//!
//! Soft merging walks candidates in descending raw score. Each candidate is
//! decayed against every already-finalized detection of the same category:
//!
//! ```text
//! score_m <- score_m * sqrt(1 - IoS(M_m, M_m') * w(m, m'))
//! ```
//!
//! where `IoS` is intersection over the area of the candidate being decayed
//! and `w` is the cosine of the two pooled features, floored at
//! `weight_floor`. Finalized scores are never revisited.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, IndexedMask};
use crate::matching::{classify_all, Candidate};
use crate::memory_bank::MemoryBank;
use crate::tensor_io::{BinaryMask, FeatureMap};

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStrategy {
    /// Drop a detection fully contained (IoS = 1) in a higher-ranked one.
    Hard,
    /// Soft decay on geometry only (`w = 1`).
    SoftPlain,
    /// Soft decay weighted by feature similarity.
    SoftSemantic,
}

impl MergeStrategy {
    pub const ALL: [MergeStrategy; 3] = [
        MergeStrategy::Hard,
        MergeStrategy::SoftPlain,
        MergeStrategy::SoftSemantic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MergeStrategy::Hard => "hard",
            MergeStrategy::SoftPlain => "soft_plain",
            MergeStrategy::SoftSemantic => "soft_semantic",
        }
    }
}

impl fmt::Display for MergeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(MergeStrategy::Hard),
            "soft_plain" => Ok(MergeStrategy::SoftPlain),
            "soft_semantic" => Ok(MergeStrategy::SoftSemantic),
            other => Err(Error::Config(format!("unknown merge strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub nms_iou: f64,
    pub top_k: usize,
    pub strategy: MergeStrategy,
    pub weight_floor: f64,
    /// Suppress across categories in NMS (otherwise per category).
    pub class_agnostic_nms: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            nms_iou: DEFAULT_NMS_IOU,
            top_k: DEFAULT_TOP_K,
            strategy: MergeStrategy::SoftSemantic,
            weight_floor: 0.0,
            class_agnostic_nms: true,
        }
    }
}

impl MergeConfig {
    pub fn with_strategy(strategy: MergeStrategy) -> Self {
        MergeConfig {
            strategy,
            ..MergeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config(format!(
                "nms_iou must be in (0, 1], got {}",
                self.nms_iou
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.weight_floor) {
            return Err(Error::Config(format!(
                "weight_floor must be in [0, 1], got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }
}

/// Final per-image output.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: BinaryMask,
    pub bbox: BBox,
    pub category_id: u32,
    /// Score after decay.
    pub score: f64,
    /// Cosine score before decay.
    pub raw_score: f64,
    pub source_rank: usize,
}

/// Descending score, then ascending source rank.
fn rank_order(a_score: f64, a_rank: usize, b_score: f64, b_rank: usize) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then(a_rank.cmp(&b_rank))
}

fn sort_candidates(cands: &mut [Candidate]) {
    cands.sort_by(|a, b| rank_order(a.score, a.source_rank, b.score, b.source_rank));
}

/// Greedy class-agnostic NMS: a candidate is dropped when its IoU with an
/// already kept candidate exceeds `iou_thresh`. Output is in rank order.
pub fn nms(cands: Vec<Candidate>, iou_thresh: f64) -> Vec<Candidate> {
    nms_impl(cands, iou_thresh, true)
}

/// NMS that only suppresses within a category.
pub fn nms_per_class(cands: Vec<Candidate>, iou_thresh: f64) -> Vec<Candidate> {
    nms_impl(cands, iou_thresh, false)
}

fn nms_impl(mut cands: Vec<Candidate>, iou_thresh: f64, class_agnostic: bool) -> Vec<Candidate> {
    sort_candidates(&mut cands);
    let indexed: Vec<IndexedMask> = cands
        .iter()
        .map(|c| IndexedMask::new(&c.mask).expect("candidates have non-empty masks"))
        .collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..cands.len() {
        let suppressed = kept.iter().any(|&k| {
            (class_agnostic || cands[k].category_id == cands[i].category_id)
                && indexed[k].iou_exceeds(&indexed[i], iou_thresh)
        });
        if !suppressed {
            kept.push(i);
        }
    }
    let mut keep = vec![false; cands.len()];
    kept.iter().for_each(|&k| keep[k] = true);
    cands
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

/// Feature-similarity weight `max(floor, cos(a, b))`, capped at 1.
///
/// The cosine is taken with explicit norms so that identical vectors give
/// exactly 1 even when their stored norm is off by rounding.
pub fn pair_weight(a: &[f32], b: &[f32], floor: f64) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if denom == 0.0 {
        return floor.min(1.0);
    }
    (dot / denom).min(1.0).max(floor)
}

/// Merges overlapping same-category candidates and keeps the top `cfg.top_k`.
pub fn soft_merge(cands: Vec<Candidate>, cfg: &MergeConfig) -> Vec<Detection> {
    let mut cands = cands;
    sort_candidates(&mut cands);
    let indexed: Vec<IndexedMask> = cands
        .iter()
        .map(|c| IndexedMask::new(&c.mask).expect("candidates have non-empty masks"))
        .collect();

    let mut finalized: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut adjusted: Vec<Option<f64>> = vec![None; cands.len()];
    for (m, cand) in cands.iter().enumerate() {
        let earlier = finalized.entry(cand.category_id).or_default();
        let mut score = cand.score;
        let mut keep = true;
        for &p in earlier.iter() {
            match cfg.strategy {
                MergeStrategy::Hard => {
                    if indexed[m].intersection(&indexed[p]) == indexed[m].area() {
                        keep = false;
                        break;
                    }
                }
                MergeStrategy::SoftPlain | MergeStrategy::SoftSemantic => {
                    let ios = indexed[m].ios(&indexed[p]);
                    if ios == 0.0 {
                        continue;
                    }
                    let w = if cfg.strategy == MergeStrategy::SoftSemantic {
                        pair_weight(&cand.feature, &cands[p].feature, cfg.weight_floor)
                    } else {
                        1.0
                    };
                    score *= (1.0 - ios * w).sqrt();
                }
            }
        }
        if keep {
            earlier.push(m);
            adjusted[m] = Some(score);
        }
    }

    let mut detections: Vec<Detection> = cands
        .into_iter()
        .zip(indexed)
        .zip(adjusted)
        .filter_map(|((c, ix), s)| {
            s.map(|score| Detection {
                bbox: ix.bbox(),
                mask: c.mask,
                category_id: c.category_id,
                score,
                raw_score: c.score,
                source_rank: c.source_rank,
            })
        })
        .collect();
    detections.sort_by(|a, b| rank_order(a.score, a.source_rank, b.score, b.source_rank));
    detections.truncate(cfg.top_k);
    detections
}

/// NMS as configured (class-agnostic or per category).
pub fn apply_nms(cands: Vec<Candidate>, cfg: &MergeConfig) -> Vec<Candidate> {
    nms_impl(cands, cfg.nms_iou, cfg.class_agnostic_nms)
}

/// Full per-image inference: match, suppress, merge.
pub fn postprocess_image(
    feat: &FeatureMap,
    proposals: &[BinaryMask],
    bank: &MemoryBank,
    cfg: &MergeConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let cands = classify_all(feat, proposals, bank)?;
    let kept = apply_nms(cands, cfg);
    Ok(soft_merge(kept, cfg))
}
