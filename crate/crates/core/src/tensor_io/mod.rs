//! File formats shared between the engine and the feature/proposal exporter.

mod fmap;
mod manifest;
mod masks;
mod rle;

pub use fmap::{
    read_feature_map, write_feature_map, FeatureMap, FMAP_HEADER_LEN, FMAP_MAGIC, FMAP_VERSION,
};
pub use manifest::{
    read_manifest, write_manifest, Category, DatasetManifest, ReferenceEntry, TargetEntry,
};
pub use masks::{
    read_masks, write_masks, write_proposals, InstanceAnnotation, MaskExtras, MaskRecord, RleJson,
};
pub use rle::{rle_decode, rle_encode, BinaryMask, DenseMask, OnesIter};
