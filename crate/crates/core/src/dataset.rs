//! In-memory datasets loaded from a manifest, and seeded n-shot sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::memory_bank::ReferenceImage;
use crate::tensor_io::{
    read_feature_map, read_manifest, read_masks, BinaryMask, Category, DatasetManifest,
    FeatureMap, InstanceAnnotation, MaskRecord, ReferenceEntry, TargetEntry,
};

/// A target image with its features, proposals and optional ground truth.
#[derive(Debug, Clone)]
pub struct TargetImage {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub features: FeatureMap,
    pub proposals: Vec<BinaryMask>,
    pub ground_truth: Option<Vec<InstanceAnnotation>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub categories: Vec<Category>,
    pub references: Vec<ReferenceImage>,
    pub targets: Vec<TargetImage>,
}

fn annotations(records: &[MaskRecord]) -> Result<Vec<InstanceAnnotation>> {
    records.iter().map(MaskRecord::to_annotation).collect()
}

pub fn load_reference(entry: &ReferenceEntry, base: &Path) -> Result<ReferenceImage> {
    Ok(ReferenceImage {
        image_id: entry.image_id,
        features: read_feature_map(base.join(&entry.feature_path))?,
        annotations: annotations(&entry.annotations)?,
    })
}

pub fn load_target(entry: &TargetEntry, base: &Path) -> Result<TargetImage> {
    let proposals = read_masks(base.join(&entry.candidates_path))?
        .iter()
        .map(|r| r.rle.to_mask())
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = proposals
        .iter()
        .find(|m| m.height() != entry.height || m.width() != entry.width)
    {
        return Err(Error::DimMismatch(format!(
            "image {} is {}x{} but has a {}x{} proposal",
            entry.image_id,
            entry.height,
            entry.width,
            m.height(),
            m.width()
        )));
    }
    Ok(TargetImage {
        image_id: entry.image_id,
        height: entry.height,
        width: entry.width,
        features: read_feature_map(base.join(&entry.feature_path))?,
        proposals,
        ground_truth: entry.ground_truth.as_deref().map(annotations).transpose()?,
    })
}

impl Dataset {
    pub fn from_manifest(manifest: &DatasetManifest, base: &Path) -> Result<Self> {
        manifest.validate()?;
        Ok(Dataset {
            categories: manifest.categories.clone(),
            references: manifest
                .reference_images
                .iter()
                .map(|e| load_reference(e, base))
                .collect::<Result<_>>()?,
            targets: manifest
                .target_images
                .iter()
                .map(|e| load_target(e, base))
                .collect::<Result<_>>()?,
        })
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let (manifest, base) = read_manifest(manifest_path)?;
        Self::from_manifest(&manifest, &base)
    }

    pub fn category_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Feature dimension shared by all images, or `None` for an empty dataset.
    pub fn feature_dim(&self) -> Result<Option<usize>> {
        let mut dims = self
            .references
            .iter()
            .map(|r| (r.image_id, r.features.dim()))
            .chain(self.targets.iter().map(|t| (t.image_id, t.features.dim())));
        let Some((_, dim)) = dims.next() else {
            return Ok(None);
        };
        if let Some((id, other)) = dims.find(|&(_, d)| d != dim) {
            return Err(Error::DimMismatch(format!(
                "image {id} has feature dim {other}, expected {dim}"
            )));
        }
        Ok(Some(dim))
    }
}

/// Samples `shots` reference images per category, uniformly without
/// replacement among the images containing that category.
///
/// Categories are visited in ascending id order with one ChaCha8 stream
/// seeded by `seed`. Each sampled image contributes only the annotations of
/// the category it was drawn for; an image drawn for several categories is
/// returned once with the union of those annotations. Output is sorted by
/// image id.
pub fn sample_references(
    references: &[ReferenceImage],
    category_ids: &[u32],
    shots: usize,
    seed: u64,
) -> Result<Vec<ReferenceImage>> {
    if shots == 0 {
        return Err(Error::Config("shots must be at least 1".into()));
    }
    let by_id: BTreeMap<u64, &ReferenceImage> =
        references.iter().map(|r| (r.image_id, r)).collect();
    let categories: BTreeSet<u32> = category_ids.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: BTreeMap<u64, BTreeSet<u32>> = BTreeMap::new();
    for &category_id in &categories {
        let pool: Vec<u64> = by_id
            .values()
            .filter(|r| r.annotations.iter().any(|a| a.category_id == category_id))
            .map(|r| r.image_id)
            .collect();
        if pool.len() < shots {
            return Err(Error::InsufficientReferences {
                category_id,
                needed: shots,
                available: pool.len(),
            });
        }
        let mut picks = rand::seq::index::sample(&mut rng, pool.len(), shots).into_vec();
        picks.sort_unstable();
        for i in picks {
            chosen.entry(pool[i]).or_default().insert(category_id);
        }
    }
    Ok(chosen
        .into_iter()
        .map(|(image_id, cats)| {
            let r = by_id[&image_id];
            ReferenceImage {
                image_id,
                features: r.features.clone(),
                annotations: r
                    .annotations
                    .iter()
                    .filter(|a| cats.contains(&a.category_id))
                    .cloned()
                    .collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(image_id: u64, cats: &[u32]) -> ReferenceImage {
        ReferenceImage {
            image_id,
            features: FeatureMap::new(1, 1, 1, vec![1.0]).unwrap(),
            annotations: cats
                .iter()
                .enumerate()
                .map(|(i, &c)| InstanceAnnotation::new(BinaryMask::full(2, 2), c, i as u64).unwrap())
                .collect(),
        }
    }

    fn pool() -> Vec<ReferenceImage> {
        vec![
            reference(5, &[0]),
            reference(1, &[0, 1]),
            reference(3, &[1]),
            reference(4, &[0, 1]),
            reference(2, &[0]),
        ]
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_references(&pool(), &[0, 1], 2, 7).unwrap();
        let b = sample_references(&pool(), &[1, 0], 2, 7).unwrap();
        let ids = |v: &[ReferenceImage]| v.iter().map(|r| r.image_id).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        let mut shuffled = pool();
        shuffled.reverse();
        let c = sample_references(&shuffled, &[0, 1], 2, 7).unwrap();
        assert_eq!(ids(&a), ids(&c));
    }

    #[test]
    fn shot_counts_per_category() {
        for seed in 0..20 {
            let s = sample_references(&pool(), &[0, 1], 2, seed).unwrap();
            for cat in [0, 1] {
                let n = s
                    .iter()
                    .filter(|r| r.annotations.iter().any(|a| a.category_id == cat))
                    .count();
                assert_eq!(n, 2);
            }
            assert!(s.windows(2).all(|w| w[0].image_id < w[1].image_id));
        }
    }

    #[test]
    fn only_drawn_categories_kept() {
        let refs = vec![reference(1, &[0, 1]), reference(2, &[1])];
        let s = sample_references(&refs, &[0], 1, 0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].annotations.len(), 1);
        assert_eq!(s[0].annotations[0].category_id, 0);
    }

    #[test]
    fn insufficient_references() {
        let err = sample_references(&pool(), &[1], 4, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientReferences {
                category_id: 1,
                needed: 4,
                available: 3
            }
        ));
        assert!(sample_references(&pool(), &[7], 1, 0).is_err());
    }
}
