//! Property tests for the engine invariants.

mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refseg::evaluation::{coco_map, EvalImage, EvalMode};
use refseg::geometry::{cell_span, mask_iou, mask_to_bbox, resize_mask_to_grid, FeatureGridMask};
use refseg::matching::Candidate;
use refseg::memory_bank::{build_bank, merge_banks, MemoryBank, ReferenceImage};
use refseg::merging::{nms, nms_per_class, soft_merge, Detection, MergeConfig, MergeStrategy};
use refseg::tensor_io::{rle_decode, rle_encode, BinaryMask, DenseMask, FeatureMap, InstanceAnnotation};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_candidates(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Vec<Candidate> {
    (0..n)
        .map(|rank| Candidate {
            mask: random_px(r, h, w).to_mask(),
            grid_mask: FeatureGridMask::new(1, 1, vec![1]).unwrap(),
            feature: random_unit(r, 4),
            score: r.random_range(0.0..1.0),
            category_id: r.random_range(1..=3),
            source_rank: rank,
        })
        .collect()
}

fn detection(mask: BinaryMask, category_id: u32, score: f64, rank: usize) -> Detection {
    Detection {
        bbox: mask_to_bbox(&mask).unwrap(),
        mask,
        category_id,
        score,
        raw_score: score,
        source_rank: rank,
    }
}

/// Ground truth confined to columns `0..w - 4`, detections anywhere.
fn random_scene(r: &mut ChaCha8Rng, images: usize) -> Vec<EvalImage> {
    let (h, w) = (12, 16);
    (0..images)
        .map(|i| {
            let ground_truth: Vec<InstanceAnnotation> = (0..r.random_range(1..4))
                .map(|k| {
                    let m = random_rect(r, h, w - 4).to_mask();
                    let padded = Px::new(h, w, |y, x| x < w - 4 && Px::from_mask(&m).get(y, x));
                    InstanceAnnotation::new(padded.to_mask(), r.random_range(1..=2), k).unwrap()
                })
                .collect();
            let mut detections = Vec::new();
            for (k, g) in ground_truth.iter().enumerate() {
                if r.random_bool(0.7) {
                    detections.push(detection(g.mask.clone(), g.category_id, r.random_range(0.0..1.0), k));
                }
            }
            for k in 0..r.random_range(0..4) {
                let cat = r.random_range(1..=2);
                detections.push(detection(random_rect(r, h, w).to_mask(), cat, r.random_range(0.0..1.0), 10 + k));
            }
            EvalImage {
                image_id: i as u64,
                detections,
                ground_truth,
            }
        })
        .collect()
}

fn random_refs(r: &mut ChaCha8Rng, count: usize) -> Vec<ReferenceImage> {
    let (gh, gw, d) = (4, 5, 6);
    (0..count)
        .map(|i| ReferenceImage {
            image_id: i as u64,
            features: FeatureMap::new(gh, gw, d, (0..gh * gw * d).map(|_| r.random_range(-1.0f32..1.0)).collect())
                .unwrap(),
            annotations: (0..r.random_range(1..3))
                .map(|k| InstanceAnnotation::new(random_px(r, 16, 20).to_mask(), r.random_range(1..=3), k).unwrap())
                .collect(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rle_round_trip(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let mut r = rng(seed);
        let mut dense = DenseMask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                dense.set(y, x, r.random_bool(0.4) as u8);
            }
        }
        let mask = rle_encode(&dense).unwrap();
        prop_assert_eq!(mask.counts().iter().map(|&c| c as usize).sum::<usize>(), h * w);
        prop_assert_eq!(rle_decode(&mask), dense);
        let back = BinaryMask::from_counts(h, w, mask.counts()).unwrap();
        prop_assert_eq!(back, mask);
    }

    #[test]
    fn fmap_round_trip(seed in any::<u64>(), h in 1usize..6, w in 1usize..6, d in 1usize..9) {
        let mut r = rng(seed);
        let map = FeatureMap::new(h, w, d, (0..h * w * d).map(|_| r.random_range(-1e3f32..1e3)).collect()).unwrap();
        let bytes = map.to_bytes();
        prop_assert_eq!(bytes.len(), 16 + 4 * h * w * d);
        prop_assert_eq!(FeatureMap::from_bytes(&bytes).unwrap(), map);
    }

    #[test]
    fn cell_spans_cover_and_stay_in_bounds(cells in 1usize..80, pixels in 1usize..200) {
        let mut covered = vec![false; pixels];
        for i in 0..cells {
            let (s, e) = cell_span(i, cells, pixels);
            prop_assert!(s < e && e <= pixels);
            covered[s..e].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn resize_never_empty(seed in any::<u64>(), gh in 1usize..10, gw in 1usize..10) {
        let mut r = rng(seed);
        let mask = random_px(&mut r, 17, 23).to_mask();
        let grid = resize_mask_to_grid(&mask, gh, gw).unwrap();
        prop_assert!(grid.active_count() >= 1);
        prop_assert_eq!(grid.data().to_vec(), resize(&Px::from_mask(&mask), gh, gw).iter().map(|&b| b as u8).collect::<Vec<_>>());
    }

    #[test]
    fn nms_is_idempotent_and_separates(seed in any::<u64>(), n in 0usize..25, thresh in 0.1f64..0.9, agnostic: bool) {
        let mut r = rng(seed);
        let cands = random_candidates(&mut r, n, 10, 12);
        let run = |c: Vec<Candidate>| if agnostic { nms(c, thresh) } else { nms_per_class(c, thresh) };
        let once = run(cands);
        let twice = run(once.clone());
        prop_assert_eq!(&twice, &once);
        for (i, a) in once.iter().enumerate() {
            for b in &once[i + 1..] {
                if agnostic || a.category_id == b.category_id {
                    prop_assert!(mask_iou(&a.mask, &b.mask).unwrap() <= thresh);
                }
            }
        }
    }

    #[test]
    fn merge_only_decays(seed in any::<u64>(), n in 0usize..25, top_k in 1usize..30) {
        let mut r = rng(seed);
        let cands = random_candidates(&mut r, n, 10, 12);
        let run = |strategy| soft_merge(cands.clone(), &MergeConfig { top_k, ..MergeConfig::with_strategy(strategy) });
        let plain = run(MergeStrategy::SoftPlain);
        let semantic = run(MergeStrategy::SoftSemantic);
        let hard = run(MergeStrategy::Hard);
        for out in [&plain, &semantic, &hard] {
            prop_assert!(out.len() <= top_k);
            prop_assert!(out.windows(2).all(|p| p[0].score >= p[1].score));
            for d in out.iter() {
                prop_assert!(d.score >= 0.0 && d.score <= d.raw_score);
            }
        }
        for d in &hard {
            prop_assert_eq!(d.score, d.raw_score);
        }
        if n <= top_k {
            prop_assert_eq!(plain.len(), n);
            for p in &plain {
                let s = semantic.iter().find(|s| s.source_rank == p.source_rank).unwrap();
                prop_assert!(s.score >= p.score);
            }
        }
    }

    #[test]
    fn ap_invariant_under_monotone_scores(seed in any::<u64>(), use_boxes: bool) {
        let mode = if use_boxes { EvalMode::Bbox } else { EvalMode::Mask };
        let mut r = rng(seed);
        let images = random_scene(&mut r, 3);
        let mut shifted = images.clone();
        for img in &mut shifted {
            for d in &mut img.detections {
                d.score = 0.25 + 0.5 * d.score.powi(3);
            }
        }
        let a = coco_map(&images, mode, 100).unwrap();
        let b = coco_map(&shifted, mode, 100).unwrap();
        prop_assert_eq!(a.per_category, b.per_category);
    }

    #[test]
    fn false_positive_never_raises_ap(seed in any::<u64>(), use_boxes: bool, score in 0.0f64..1.0) {
        let mode = if use_boxes { EvalMode::Bbox } else { EvalMode::Mask };
        let mut r = rng(seed);
        let images = random_scene(&mut r, 3);
        let base = coco_map(&images, mode, usize::MAX).unwrap();
        let mut extra = images.clone();
        let far = BinaryMask::rectangle(12, 16, 13, 0, 16, 12);
        let cat = *base.per_category.keys().next().unwrap();
        extra[0].detections.push(detection(far, cat, score, 99));
        let more = coco_map(&extra, mode, usize::MAX).unwrap();
        for (c, ap) in &base.per_category {
            prop_assert!(more.per_category[c].ap <= ap.ap);
        }
    }

    #[test]
    fn perfect_detections_score_one(seed in any::<u64>(), use_boxes: bool) {
        let mode = if use_boxes { EvalMode::Bbox } else { EvalMode::Mask };
        let mut r = rng(seed);
        let mut images = random_scene(&mut r, 3);
        for img in &mut images {
            img.detections = img
                .ground_truth
                .iter()
                .enumerate()
                .map(|(k, g)| detection(g.mask.clone(), g.category_id, 1.0 - k as f64 * 0.01, k))
                .collect();
        }
        let report = coco_map(&images, mode, 100).unwrap();
        prop_assert_eq!(report.mean_ap, 1.0);
        prop_assert_eq!(report.mean_ap50, 1.0);
    }

    #[test]
    fn bank_merge_matches_joint_build(seed in any::<u64>(), count in 2usize..7, cut in 1usize..6) {
        let mut r = rng(seed);
        let refs = random_refs(&mut r, count);
        let cut = cut.min(count - 1);
        let joint = build_bank(&refs, 6).unwrap();
        let merged = merge_banks(&[build_bank(&refs[cut..], 6).unwrap(), build_bank(&refs[..cut], 6).unwrap()]).unwrap();
        prop_assert_eq!(merged.to_bytes(), joint.to_bytes());
        prop_assert_eq!(MemoryBank::from_bytes(&joint.to_bytes()).unwrap(), joint);
    }
}
