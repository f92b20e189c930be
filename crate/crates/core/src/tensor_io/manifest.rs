//! `manifest.json`: categories plus reference and target image entries.
//!
//! Paths inside a manifest are relative to the directory holding it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::masks::MaskRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub feature_path: String,
    pub annotations: Vec<MaskRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub feature_path: String,
    pub candidates_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<MaskRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub categories: Vec<Category>,
    pub reference_images: Vec<ReferenceEntry>,
    pub target_images: Vec<TargetEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut category_ids = BTreeSet::new();
        for c in &self.categories {
            if !category_ids.insert(c.id) {
                return Err(Error::Manifest(format!("duplicate category id {}", c.id)));
            }
        }
        let mut image_ids = BTreeSet::new();
        let check_annotations = |image_id: u64, h: usize, w: usize, anns: &[MaskRecord]| {
            let mut instance_ids = BTreeSet::new();
            for a in anns {
                let ann = a.to_annotation().map_err(|e| {
                    Error::Manifest(format!(
                        "image {image_id} instance {}: {e}",
                        a.instance_id
                    ))
                })?;
                if !category_ids.contains(&ann.category_id) {
                    return Err(Error::Manifest(format!(
                        "image {image_id} instance {} references unknown category {}",
                        a.instance_id, ann.category_id
                    )));
                }
                if ann.mask.height() != h || ann.mask.width() != w {
                    return Err(Error::Manifest(format!(
                        "image {image_id} instance {} mask is {}x{}, image is {h}x{w}",
                        a.instance_id,
                        ann.mask.height(),
                        ann.mask.width()
                    )));
                }
                if !instance_ids.insert(a.instance_id) {
                    return Err(Error::Manifest(format!(
                        "image {image_id} has duplicate instance id {}",
                        a.instance_id
                    )));
                }
            }
            Ok(())
        };
        for r in &self.reference_images {
            if !image_ids.insert(r.image_id) {
                return Err(Error::Manifest(format!("duplicate image id {}", r.image_id)));
            }
            check_annotations(r.image_id, r.height, r.width, &r.annotations)?;
        }
        for t in &self.target_images {
            if !image_ids.insert(t.image_id) {
                return Err(Error::Manifest(format!("duplicate image id {}", t.image_id)));
            }
            if let Some(gt) = &t.ground_truth {
                check_annotations(t.image_id, t.height, t.width, gt)?;
            }
        }
        Ok(())
    }

    pub fn category_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }
}

/// Reads and validates a manifest. Returns it with the directory that its
/// relative paths resolve against.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<(DatasetManifest, PathBuf)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((manifest, base))
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
