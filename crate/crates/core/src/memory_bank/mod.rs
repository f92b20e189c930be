//! Reference memory: masked feature pooling into instance prototypes, then
//! per-category averaging into class prototypes.

mod format;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{resize_mask_to_grid, FeatureGridMask};
use crate::tensor_io::{FeatureMap, InstanceAnnotation};

pub use format::{read_bank, write_bank, BANK_MAGIC, BANK_VERSION};

/// Mean feature of one annotated reference instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrototype {
    pub vector: Vec<f32>,
    pub category_id: u32,
    pub image_id: u64,
    pub instance_id: u64,
}

impl InstancePrototype {
    fn source(&self) -> (u64, u64) {
        (self.image_id, self.instance_id)
    }
}

/// Mean of all instance prototypes of one category.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub vector: Vec<f32>,
    pub category_id: u32,
    pub instance_count: usize,
}

/// An annotated reference image with its dense features.
#[derive(Debug, Clone)]
pub struct ReferenceImage {
    pub image_id: u64,
    pub features: FeatureMap,
    pub annotations: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    prototypes: BTreeMap<u32, ClassPrototype>,
    instances: BTreeMap<u32, Vec<InstancePrototype>>,
    shot_count: usize,
}

/// Unweighted mean of the feature vectors under the active grid cells.
pub fn masked_feature_pool(feat: &FeatureMap, grid_mask: &FeatureGridMask) -> Result<Vec<f64>> {
    if feat.height() != grid_mask.height() || feat.width() != grid_mask.width() {
        return Err(Error::DimMismatch(format!(
            "feature grid {}x{} vs mask grid {}x{}",
            feat.height(),
            feat.width(),
            grid_mask.height(),
            grid_mask.width()
        )));
    }
    let mut sum = vec![0f64; feat.dim()];
    let mut active = 0usize;
    for cell in grid_mask.active_cells() {
        for (s, &v) in sum.iter_mut().zip(feat.cell_at(cell)) {
            *s += v as f64;
        }
        active += 1;
    }
    if active == 0 {
        return Err(Error::EmptyGridMask);
    }
    let n = active as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Pools one reference annotation into its instance prototype.
pub fn instance_prototype(
    image_id: u64,
    feat: &FeatureMap,
    ann: &InstanceAnnotation,
) -> Result<InstancePrototype> {
    let grid = resize_mask_to_grid(&ann.mask, feat.height(), feat.width())?;
    let pooled = masked_feature_pool(feat, &grid)?;
    let vector: Vec<f32> = pooled.iter().map(|&v| v as f32).collect();
    if vector.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateFeature);
    }
    Ok(InstancePrototype {
        vector,
        category_id: ann.category_id,
        image_id,
        instance_id: ann.instance_id,
    })
}

/// Builds a bank from annotated reference images.
///
/// Instance pooling runs in parallel over images on the current rayon pool;
/// the reduction is an ordered fold over `(image_id, instance_id)`, so the
/// result does not depend on input order or thread count.
pub fn build_bank(refs: &[ReferenceImage], dim: usize) -> Result<MemoryBank> {
    if refs.is_empty() {
        return Err(Error::NoReferences);
    }
    for r in refs {
        if r.features.dim() != dim {
            return Err(Error::DimMismatch(format!(
                "reference image {} has feature dim {}, bank dim is {dim}",
                r.image_id,
                r.features.dim()
            )));
        }
    }
    let per_image: Vec<Vec<InstancePrototype>> = refs
        .par_iter()
        .map(|r| {
            r.annotations
                .iter()
                .map(|a| instance_prototype(r.image_id, &r.features, a))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    MemoryBank::from_instances(dim, per_image.into_iter().flatten())
}

/// Merges shard banks into one; class prototypes are recomputed from the
/// merged instance lists.
pub fn merge_banks(banks: &[MemoryBank]) -> Result<MemoryBank> {
    let dim = banks
        .iter()
        .find(|b| !b.is_empty())
        .or(banks.first())
        .map(|b| b.dim)
        .ok_or(Error::NoReferences)?;
    for b in banks.iter().filter(|b| !b.is_empty()) {
        if b.dim != dim {
            return Err(Error::DimMismatch(format!(
                "cannot merge banks of dim {dim} and {}",
                b.dim
            )));
        }
    }
    MemoryBank::from_instances(
        dim,
        banks
            .iter()
            .flat_map(|b| b.instances.values().flatten().cloned()),
    )
}

impl MemoryBank {
    pub fn empty(dim: usize) -> Self {
        MemoryBank {
            dim,
            prototypes: BTreeMap::new(),
            instances: BTreeMap::new(),
            shot_count: 0,
        }
    }

    /// Groups instance prototypes by category, sorts each group by source and
    /// computes the class means.
    pub fn from_instances(
        dim: usize,
        instances: impl IntoIterator<Item = InstancePrototype>,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<u32, Vec<InstancePrototype>> = BTreeMap::new();
        for inst in instances {
            if inst.vector.len() != dim {
                return Err(Error::DimMismatch(format!(
                    "instance prototype has length {}, bank dim is {dim}",
                    inst.vector.len()
                )));
            }
            if inst.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: 0 });
            }
            grouped.entry(inst.category_id).or_default().push(inst);
        }

        let mut sources = BTreeSet::new();
        let mut prototypes = BTreeMap::new();
        let mut shot_count = 0;
        for (&category_id, list) in grouped.iter_mut() {
            list.sort_by_key(InstancePrototype::source);
            for inst in list.iter() {
                if !sources.insert(inst.source()) {
                    return Err(Error::DuplicateInstance {
                        image_id: inst.image_id,
                        instance_id: inst.instance_id,
                    });
                }
            }
            let images: BTreeSet<u64> = list.iter().map(|i| i.image_id).collect();
            shot_count = shot_count.max(images.len());
            prototypes.insert(
                category_id,
                ClassPrototype {
                    vector: class_mean(dim, list),
                    category_id,
                    instance_count: list.len(),
                },
            );
        }
        Ok(MemoryBank {
            dim,
            prototypes,
            instances: grouped,
            shot_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    /// Largest number of distinct reference images contributing to any category.
    pub fn shot_count(&self) -> usize {
        self.shot_count
    }

    pub fn prototypes(&self) -> &BTreeMap<u32, ClassPrototype> {
        &self.prototypes
    }

    pub fn prototype(&self, category_id: u32) -> Option<&ClassPrototype> {
        self.prototypes.get(&category_id)
    }

    pub fn instances(&self) -> &BTreeMap<u32, Vec<InstancePrototype>> {
        &self.instances
    }

    pub fn category_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.prototypes.keys().copied()
    }
}

fn class_mean(dim: usize, list: &[InstancePrototype]) -> Vec<f32> {
    let mut sum = vec![0f64; dim];
    for inst in list {
        for (s, &v) in sum.iter_mut().zip(&inst.vector) {
            *s += v as f64;
        }
    }
    let n = list.len() as f64;
    sum.iter().map(|&s| (s / n) as f32).collect()
}
