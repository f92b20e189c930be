//! `.masks.json` mask-list files and the shared RLE JSON record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rle::BinaryMask;
use crate::error::{Error, Result};

/// `{"size": [h, w], "counts": [...]}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleJson {
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl From<&BinaryMask> for RleJson {
    fn from(mask: &BinaryMask) -> Self {
        RleJson {
            size: [mask.height(), mask.width()],
            counts: mask.counts().to_vec(),
        }
    }
}

impl RleJson {
    pub fn to_mask(&self) -> Result<BinaryMask> {
        BinaryMask::from_counts(self.size[0], self.size[1], &self.counts)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskExtras {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<f64>,
}

/// One entry of a `.masks.json` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub instance_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<u32>,
    pub rle: RleJson,
    #[serde(default)]
    pub extras: MaskExtras,
}

/// Binary mask tagged with its category, used for references and ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceAnnotation {
    pub mask: BinaryMask,
    pub category_id: u32,
    pub instance_id: u64,
}

impl InstanceAnnotation {
    pub fn new(mask: BinaryMask, category_id: u32, instance_id: u64) -> Result<Self> {
        if mask.area() == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(InstanceAnnotation {
            mask,
            category_id,
            instance_id,
        })
    }

    pub fn to_record(&self) -> MaskRecord {
        MaskRecord {
            instance_id: self.instance_id,
            category_id: Some(self.category_id),
            rle: RleJson::from(&self.mask),
            extras: MaskExtras::default(),
        }
    }
}

impl MaskRecord {
    pub fn to_annotation(&self) -> Result<InstanceAnnotation> {
        let category_id = self.category_id.ok_or_else(|| {
            Error::Manifest(format!("instance {} has no category_id", self.instance_id))
        })?;
        InstanceAnnotation::new(self.rle.to_mask()?, category_id, self.instance_id)
    }
}

pub fn read_masks(path: impl AsRef<Path>) -> Result<Vec<MaskRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<MaskRecord> = serde_json::from_str(&text)?;
    for r in &records {
        // Validates the run sum.
        r.rle.to_mask()?;
    }
    Ok(records)
}

pub fn write_masks(path: impl AsRef<Path>, records: &[MaskRecord]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes bare proposal masks with sequential instance ids.
pub fn write_proposals(path: impl AsRef<Path>, masks: &[BinaryMask]) -> Result<()> {
    let records: Vec<MaskRecord> = masks
        .iter()
        .enumerate()
        .map(|(i, m)| MaskRecord {
            instance_id: i as u64,
            category_id: None,
            rle: RleJson::from(m),
            extras: MaskExtras::default(),
        })
        .collect();
    write_masks(path, &records)
}
