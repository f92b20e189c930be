//! Synthetic datasets with known answers.
//!
//! Every class has a unit direction; pairs of class directions meet at
//! `separation_deg`. A background direction is orthogonal to all of them.
//! Instances are cell-aligned rectangles placed in disjoint slots of the
//! feature grid; each instance draws its own direction around the class
//! direction (`instance_jitter`) and each cell adds independent noise
//! (`noise`). All features are unit vectors.
//!
//! Target proposals are the exact ground-truth masks plus, controlled by
//! `duplicate_rate`, near copies (one extra column, IoU above 0.5),
//! fragments (a third of the columns, contained in the instance) and unions
//! of horizontally neighbouring instances, plus `distractors` random
//! rectangles. Proposal order is shuffled.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TargetImage};
use crate::error::{Error, Result};
use crate::geometry::{cell_span, mask_iou};
use crate::memory_bank::ReferenceImage;
use crate::tensor_io::{
    write_feature_map, write_manifest, write_proposals, BinaryMask, Category,
    DatasetManifest, FeatureMap, InstanceAnnotation, MaskExtras, MaskRecord, ReferenceEntry,
    RleJson, TargetEntry,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    /// Feature grid `(rows, cols)`.
    pub grid: (usize, usize),
    /// Image `(height, width)` in pixels.
    pub image_size: (usize, usize),
    /// Side of the square placement slots, in cells.
    pub slot: usize,
    pub reference_images: usize,
    pub target_images: usize,
    /// Inclusive range of instances per image.
    pub instances_per_image: (usize, usize),
    /// Angle between any two class directions, in degrees, within `(0, 90]`.
    pub separation_deg: f64,
    pub noise: f64,
    pub instance_jitter: f64,
    pub duplicate_rate: f64,
    pub distractors: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Orthogonal classes, no noise, no duplicates.
    pub fn noiseless(classes: usize, target_images: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            dim: 32,
            grid: (32, 32),
            image_size: (128, 128),
            slot: 8,
            reference_images: classes,
            target_images,
            instances_per_image: (2, 6),
            separation_deg: 90.0,
            noise: 0.0,
            instance_jitter: 0.0,
            duplicate_rate: 0.0,
            distractors: 0,
            seed,
        }
    }

    /// Many near copies, fragments and unions on moderately noisy features.
    pub fn duplicate_heavy(seed: u64) -> Self {
        SynthSpec {
            classes: 4,
            dim: 32,
            grid: (32, 32),
            image_size: (128, 128),
            slot: 8,
            reference_images: 8,
            target_images: 20,
            instances_per_image: (6, 12),
            separation_deg: 75.0,
            noise: 0.6,
            instance_jitter: 0.5,
            duplicate_rate: 0.7,
            distractors: 4,
            seed,
        }
    }

    /// Confusable classes with strong per-instance variation, for
    /// reference-sampling variance.
    pub fn noisy(seed: u64) -> Self {
        SynthSpec {
            classes: 5,
            dim: 32,
            grid: (32, 32),
            image_size: (128, 128),
            slot: 8,
            reference_images: 30,
            target_images: 15,
            instances_per_image: (2, 5),
            separation_deg: 50.0,
            noise: 0.5,
            instance_jitter: 0.8,
            duplicate_rate: 0.2,
            distractors: 2,
            seed,
        }
    }

    fn slots(&self) -> (usize, usize) {
        (self.grid.0 / self.slot.max(1), self.grid.1 / self.slot.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Synth(m));
        if self.classes == 0 {
            return bad("at least one class is required".into());
        }
        if self.dim < self.classes + 2 {
            return bad(format!(
                "dim {} cannot hold {} class directions plus shared and background directions",
                self.dim, self.classes
            ));
        }
        if self.slot < 5 {
            return bad(format!("slot side {} is below the minimum of 5 cells", self.slot));
        }
        if self.image_size.0 < self.grid.0 || self.image_size.1 < self.grid.1 {
            return bad("image must have at least one pixel per grid cell".into());
        }
        let (lo, hi) = self.instances_per_image;
        if lo == 0 || lo > hi {
            return bad(format!("invalid instance range {lo}..={hi}"));
        }
        let (sy, sx) = self.slots();
        if hi > sy * sx {
            return bad(format!(
                "{hi} instances do not fit in {} slots of a {}x{} grid",
                sy * sx,
                self.grid.0,
                self.grid.1
            ));
        }
        if !(self.separation_deg > 0.0 && self.separation_deg <= 90.0) {
            return bad(format!("separation {} outside (0, 90]", self.separation_deg));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("instance_jitter", self.instance_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return bad("duplicate_rate must lie in [0, 1]".into());
        }
        if self.reference_images < self.classes {
            return bad("need at least one reference image per class".into());
        }
        Ok(())
    }
}

/// Cell-aligned rectangle `[x0, x1) x [y0, y1)` in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CellRect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

struct Placed {
    rect: CellRect,
    category_id: u32,
    slot: (usize, usize),
    direction: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub manifest: DatasetManifest,
    pub features: BTreeMap<u64, FeatureMap>,
    pub proposals: BTreeMap<u64, Vec<BinaryMask>>,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    class_dirs: Vec<Vec<f64>>,
    background: Vec<f64>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        // Random orthonormal basis of classes + 2 vectors.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < spec.classes + 2 {
            let mut v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let cos = spec.separation_deg.to_radians().cos().max(0.0);
        let (a, b) = (cos.sqrt(), (1.0 - cos).sqrt());
        let shared = &basis[spec.classes];
        let class_dirs = (0..spec.classes)
            .map(|i| {
                shared
                    .iter()
                    .zip(&basis[i])
                    .map(|(s, e)| a * s + b * e)
                    .collect()
            })
            .collect();
        let background = basis[spec.classes + 1].clone();
        Generator {
            spec,
            rng,
            class_dirs,
            background,
        }
    }

    fn perturbed(&mut self, center: &[f64], scale: f64) -> Vec<f64> {
        let s = scale / (self.spec.dim as f64).sqrt();
        let mut v: Vec<f64> = center
            .iter()
            .map(|&c| c + s * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        normalize(&mut v);
        v
    }

    fn layout(&mut self, first_class: Option<usize>) -> Vec<Placed> {
        let spec = self.spec;
        let (sy, sx) = spec.slots();
        let (lo, hi) = spec.instances_per_image;
        let count = self.rng.random_range(lo..=hi);
        let mut slots: Vec<(usize, usize)> =
            (0..sy).flat_map(|y| (0..sx).map(move |x| (y, x))).collect();
        slots.shuffle(&mut self.rng);
        slots.truncate(count);
        slots.sort_unstable();
        let forced = first_class.map(|c| (self.rng.random_range(0..count), c));
        let mut placed = Vec::with_capacity(count);
        for (i, &(y, x)) in slots.iter().enumerate() {
            let class = match forced {
                Some((at, c)) if at == i => c,
                _ => self.rng.random_range(0..spec.classes),
            };
            // One background column and row of margin inside each slot.
            let w = self.rng.random_range(4..spec.slot);
            let h = self.rng.random_range(4..spec.slot);
            let ox = self.rng.random_range(0..spec.slot - w);
            let oy = self.rng.random_range(0..spec.slot - h);
            let x0 = x * spec.slot + ox;
            let y0 = y * spec.slot + oy;
            let center = self.class_dirs[class].clone();
            let direction = self.perturbed(&center, spec.instance_jitter);
            placed.push(Placed {
                rect: CellRect {
                    x0,
                    y0,
                    x1: x0 + w,
                    y1: y0 + h,
                },
                category_id: class as u32 + 1,
                slot: (y, x),
                direction,
            });
        }
        placed
    }

    fn features(&mut self, placed: &[Placed]) -> Result<FeatureMap> {
        let (gh, gw) = self.spec.grid;
        let mut owner: Vec<Option<usize>> = vec![None; gh * gw];
        for (i, p) in placed.iter().enumerate() {
            for v in p.rect.y0..p.rect.y1 {
                for u in p.rect.x0..p.rect.x1 {
                    owner[v * gw + u] = Some(i);
                }
            }
        }
        let noise = self.spec.noise;
        let mut data = Vec::with_capacity(gh * gw * self.spec.dim);
        for o in owner {
            let center = match o {
                Some(i) => placed[i].direction.clone(),
                None => self.background.clone(),
            };
            let cell = if noise > 0.0 {
                self.perturbed(&center, noise)
            } else {
                center
            };
            data.extend(cell.iter().map(|&x| x as f32));
        }
        FeatureMap::new(gh, gw, self.spec.dim, data)
    }

    fn mask(&self, r: CellRect) -> BinaryMask {
        let (gh, gw) = self.spec.grid;
        let (h, w) = self.spec.image_size;
        let (py0, _) = cell_span(r.y0, gh, h);
        let (_, py1) = cell_span(r.y1 - 1, gh, h);
        let (px0, _) = cell_span(r.x0, gw, w);
        let (_, px1) = cell_span(r.x1 - 1, gw, w);
        BinaryMask::rectangle(h, w, px0, py0, px1, py1)
    }

    fn proposals(&mut self, placed: &[Placed]) -> Result<Vec<BinaryMask>> {
        let spec = self.spec;
        let rate = spec.duplicate_rate;
        let mut out: Vec<BinaryMask> = placed.iter().map(|p| self.mask(p.rect)).collect();
        for p in placed {
            let r = p.rect;
            if rate > 0.0 && self.rng.random_bool(rate) {
                out.push(self.mask(CellRect { x1: r.x1 + 1, ..r }));
            }
            if rate > 0.0 && self.rng.random_bool(rate) {
                let fw = ((r.x1 - r.x0) / 3).max(1);
                let start = self.rng.random_range(r.x0..=r.x1 - fw);
                out.push(self.mask(CellRect {
                    x0: start,
                    x1: start + fw,
                    ..r
                }));
            }
        }
        for (i, a) in placed.iter().enumerate() {
            let Some(b) = placed[i + 1..]
                .iter()
                .find(|b| b.slot == (a.slot.0, a.slot.1 + 1))
            else {
                continue;
            };
            if rate == 0.0 || !self.rng.random_bool(rate) {
                continue;
            }
            let union = self.mask(CellRect {
                x0: a.rect.x0.min(b.rect.x0),
                y0: a.rect.y0.min(b.rect.y0),
                x1: a.rect.x1.max(b.rect.x1),
                y1: a.rect.y1.max(b.rect.y1),
            });
            let ma = self.mask(a.rect);
            let mb = self.mask(b.rect);
            if mask_iou(&union, &ma)? < 0.5 && mask_iou(&union, &mb)? < 0.5 {
                out.push(union);
            }
        }
        let (gh, gw) = spec.grid;
        for _ in 0..spec.distractors {
            let w = self.rng.random_range(2..=spec.slot.min(gw));
            let h = self.rng.random_range(2..=spec.slot.min(gh));
            let x0 = self.rng.random_range(0..=gw - w);
            let y0 = self.rng.random_range(0..=gh - h);
            out.push(self.mask(CellRect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            }));
        }
        out.shuffle(&mut self.rng);
        Ok(out)
    }

    fn records(&self, placed: &[Placed]) -> Vec<MaskRecord> {
        placed
            .iter()
            .enumerate()
            .map(|(i, p)| MaskRecord {
                instance_id: i as u64,
                category_id: Some(p.category_id),
                rle: RleJson::from(&self.mask(p.rect)),
                extras: MaskExtras::default(),
            })
            .collect()
    }
}

pub fn feature_file(image_id: u64) -> String {
    format!("features/{image_id}.fmap")
}

pub fn proposal_file(image_id: u64) -> String {
    format!("proposals/{image_id}.masks.json")
}

/// Generates a dataset deterministically from `spec.seed`. Reference image
/// `i` contains at least one instance of class `i mod classes`.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut gen = Generator::new(spec);
    let (height, width) = spec.image_size;
    let mut features = BTreeMap::new();
    let mut proposals = BTreeMap::new();
    let mut reference_images = Vec::with_capacity(spec.reference_images);
    for i in 0..spec.reference_images {
        let image_id = i as u64;
        let placed = gen.layout(Some(i % spec.classes));
        features.insert(image_id, gen.features(&placed)?);
        reference_images.push(ReferenceEntry {
            image_id,
            height,
            width,
            feature_path: feature_file(image_id),
            annotations: gen.records(&placed),
        });
    }
    let mut target_images = Vec::with_capacity(spec.target_images);
    for i in 0..spec.target_images {
        let image_id = (spec.reference_images + i) as u64;
        let placed = gen.layout(None);
        features.insert(image_id, gen.features(&placed)?);
        proposals.insert(image_id, gen.proposals(&placed)?);
        target_images.push(TargetEntry {
            image_id,
            height,
            width,
            feature_path: feature_file(image_id),
            candidates_path: proposal_file(image_id),
            ground_truth: Some(gen.records(&placed)),
        });
    }
    let manifest = DatasetManifest {
        categories: (1..=spec.classes as u32)
            .map(|id| Category {
                id,
                name: format!("class_{id}"),
            })
            .collect(),
        reference_images,
        target_images,
    };
    manifest.validate()?;
    Ok(SynthDataset {
        spec: spec.clone(),
        manifest,
        features,
        proposals,
    })
}

impl SynthDataset {
    /// The in-memory equivalent of loading the written manifest.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let annotations = |records: &[MaskRecord]| -> Result<Vec<InstanceAnnotation>> {
            records.iter().map(MaskRecord::to_annotation).collect()
        };
        Ok(Dataset {
            categories: self.manifest.categories.clone(),
            references: self
                .manifest
                .reference_images
                .iter()
                .map(|e| {
                    Ok(ReferenceImage {
                        image_id: e.image_id,
                        features: self.features[&e.image_id].clone(),
                        annotations: annotations(&e.annotations)?,
                    })
                })
                .collect::<Result<_>>()?,
            targets: self
                .manifest
                .target_images
                .iter()
                .map(|e| {
                    Ok(TargetImage {
                        image_id: e.image_id,
                        height: e.height,
                        width: e.width,
                        features: self.features[&e.image_id].clone(),
                        proposals: self.proposals[&e.image_id].clone(),
                        ground_truth: e.ground_truth.as_deref().map(annotations).transpose()?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    /// Writes `manifest.json`, `features/*.fmap` and `proposals/*.masks.json`
    /// under `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["features", "proposals"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for (&id, map) in &self.features {
            write_feature_map(dir.join(feature_file(id)), map)?;
        }
        for (&id, masks) in &self.proposals {
            write_proposals(dir.join(proposal_file(id)), masks)?;
        }
        let path = dir.join("manifest.json");
        write_manifest(&path, &self.manifest)?;
        Ok(path)
    }
}
