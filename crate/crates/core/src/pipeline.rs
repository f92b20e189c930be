//! Batch inference over target images and detection result files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_target, TargetImage};
use crate::error::{Error, Result};
use crate::evaluation::EvalImage;
use crate::matching::{classify_all, Matcher};
use crate::memory_bank::MemoryBank;
use crate::merging::{apply_nms, soft_merge, Detection, MergeConfig};
use crate::tensor_io::{RleJson, TargetEntry};

pub const WORKERS_ENV: &str = "REFSEG_WORKERS";

/// Worker count from `REFSEG_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mean wall time per image of each inference stage, in seconds. `bank_s`
/// is the time spent building or loading the bank divided by the image count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub images: usize,
    pub bank_s: f64,
    pub matching_s: f64,
    pub merging_s: f64,
}

impl StageTimings {
    fn from_totals(images: usize, bank: f64, matching: f64, merging: f64) -> Self {
        let n = images.max(1) as f64;
        StageTimings {
            images,
            bank_s: bank / n,
            matching_s: matching / n,
            merging_s: merging / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub detections: Vec<Detection>,
}

struct Timed {
    detections: Vec<Detection>,
    matching_s: f64,
    merging_s: f64,
}

fn infer_one(target: &TargetImage, bank: &MemoryBank, cfg: &MergeConfig) -> Result<Timed> {
    let t0 = Instant::now();
    let cands = classify_all(&target.features, &target.proposals, bank)?;
    let t1 = Instant::now();
    let detections = soft_merge(apply_nms(cands, cfg), cfg);
    let t2 = Instant::now();
    Ok(Timed {
        detections,
        matching_s: (t1 - t0).as_secs_f64(),
        merging_s: (t2 - t1).as_secs_f64(),
    })
}

/// Runs matching and merging on every target on the current rayon pool.
/// Results are in input order; `bank_s` of the timings is left at zero.
pub fn infer_targets(
    targets: &[TargetImage],
    bank: &MemoryBank,
    cfg: &MergeConfig,
) -> Result<(Vec<ImageDetections>, StageTimings)> {
    cfg.validate()?;
    Matcher::new(bank)?;
    let timed: Vec<Timed> = targets
        .par_iter()
        .map(|t| infer_one(t, bank, cfg))
        .collect::<Result<_>>()?;
    let (matching, merging) = timed
        .iter()
        .fold((0.0, 0.0), |acc, t| (acc.0 + t.matching_s, acc.1 + t.merging_s));
    let images = targets
        .iter()
        .zip(timed)
        .map(|(t, r)| ImageDetections {
            image_id: t.image_id,
            height: t.height,
            width: t.width,
            detections: r.detections,
        })
        .collect();
    Ok((
        images,
        StageTimings::from_totals(targets.len(), 0.0, matching, merging),
    ))
}

/// Outcome of one manifest target when loading from disk.
#[derive(Debug)]
pub struct TargetOutcome {
    pub image_id: u64,
    pub result: Result<ImageDetections>,
}

/// Loads each target lazily and infers it; a failure is recorded for that
/// image and the rest of the batch continues. `bank_s` is the time already
/// spent obtaining the bank.
pub fn infer_entries(
    entries: &[TargetEntry],
    base: &Path,
    bank: &MemoryBank,
    cfg: &MergeConfig,
    bank_s: f64,
) -> Result<(Vec<TargetOutcome>, StageTimings)> {
    cfg.validate()?;
    let per_image: Vec<(u64, Result<(ImageDetections, f64, f64)>)> = entries
        .par_iter()
        .map(|e| {
            let result = load_target(e, base).and_then(|t| {
                let r = infer_one(&t, bank, cfg)?;
                Ok((
                    ImageDetections {
                        image_id: t.image_id,
                        height: t.height,
                        width: t.width,
                        detections: r.detections,
                    },
                    r.matching_s,
                    r.merging_s,
                ))
            });
            (e.image_id, result)
        })
        .collect();
    let mut ok = 0usize;
    let (mut matching, mut merging) = (0.0, 0.0);
    let outcomes = per_image
        .into_iter()
        .map(|(image_id, r)| TargetOutcome {
            image_id,
            result: r.map(|(d, m, g)| {
                ok += 1;
                matching += m;
                merging += g;
                d
            }),
        })
        .collect();
    let timings = StageTimings::from_totals(ok, bank_s, matching, merging);
    Ok((outcomes, timings))
}

/// One element of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u32,
    pub score: f64,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [u32; 4],
    pub rle: RleJson,
}

impl DetectionRecord {
    pub fn from_detection(image_id: u64, d: &Detection) -> Self {
        DetectionRecord {
            image_id,
            category_id: d.category_id,
            score: d.score,
            bbox: d.bbox.to_xywh(),
            rle: RleJson::from(&d.mask),
        }
    }

    /// Rebuilds a detection; the pre-decay score is not stored, so it is set
    /// to the final score and the rank to the position in the file.
    pub fn to_detection(&self, rank: usize) -> Result<Detection> {
        let mask = self.rle.to_mask()?;
        let bbox = crate::geometry::mask_to_bbox(&mask)?;
        if bbox.to_xywh() != self.bbox {
            return Err(Error::Manifest(format!(
                "detection bbox {:?} disagrees with its mask {:?}",
                self.bbox,
                bbox.to_xywh()
            )));
        }
        Ok(Detection {
            mask,
            bbox,
            category_id: self.category_id,
            score: self.score,
            raw_score: self.score,
            source_rank: rank,
        })
    }
}

pub fn detections_path(dir: &Path, image_id: u64) -> PathBuf {
    dir.join(format!("{image_id}.json"))
}

pub fn detections_to_json(image: &ImageDetections) -> Result<String> {
    let records: Vec<DetectionRecord> = image
        .detections
        .iter()
        .map(|d| DetectionRecord::from_detection(image.image_id, d))
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

/// Writes `<dir>/<image_id>.json`.
pub fn write_detections(dir: &Path, image: &ImageDetections) -> Result<PathBuf> {
    let path = detections_path(dir, image.image_id);
    std::fs::write(&path, detections_to_json(image)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<DetectionRecord> = serde_json::from_str(&text)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_detection(i))
        .collect()
}

/// Pairs detections with ground truth; targets without ground truth are
/// left out.
pub fn eval_images(targets: &[TargetImage], results: &[ImageDetections]) -> Result<Vec<EvalImage>> {
    if targets.len() != results.len() {
        return Err(Error::DimMismatch(format!(
            "{} targets vs {} results",
            targets.len(),
            results.len()
        )));
    }
    Ok(targets
        .iter()
        .zip(results)
        .filter_map(|(t, r)| {
            t.ground_truth.as_ref().map(|gt| EvalImage {
                image_id: t.image_id,
                detections: r.detections.clone(),
                ground_truth: gt.clone(),
            })
        })
        .collect())
}
