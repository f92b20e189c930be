//! `.fmap` dense feature files.
//!
//! Layout: a 16-byte header followed by the payload.
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 3    | magic `b"FMP"`                         |
//! | 3      | 1    | format version (currently 1)           |
//! | 4      | 4    | grid rows `H'` (u32 LE)                |
//! | 8      | 4    | grid cols `W'` (u32 LE)                |
//! | 12     | 4    | feature dimension `d` (u32 LE)         |
//! | 16     | 4·H'·W'·d | f32 LE values, row-major, channel fastest |

use std::path::Path;

use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 3] = b"FMP";
pub const FMAP_VERSION: u8 = 1;
pub const FMAP_HEADER_LEN: usize = 16;

/// Dense `H' x W' x d` patch-feature grid for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::DimMismatch("feature map size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::DimMismatch(format!(
                "feature map {height}x{width}x{dim} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureMap {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector at grid row `v`, column `u`.
    #[inline]
    pub fn cell(&self, v: usize, u: usize) -> &[f32] {
        let start = (v * self.width + u) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Feature vector at row-major cell index `v * width + u`.
    #[inline]
    pub fn cell_at(&self, index: usize) -> &[f32] {
        let start = index * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FMAP_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(FMAP_MAGIC);
        out.push(FMAP_VERSION);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FMAP_HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "file is {} bytes, shorter than the {FMAP_HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..3] != FMAP_MAGIC {
            return Err(Error::MalformedHeader("bad magic".into()));
        }
        if bytes[3] != FMAP_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {}",
                bytes[3]
            )));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (height, width, dim) = (
            read_u32(4) as usize,
            read_u32(8) as usize,
            read_u32(12) as usize,
        );
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::MalformedHeader("declared dims overflow".into()))?;
        let payload = &bytes[FMAP_HEADER_LEN..];
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::MalformedHeader("declared dims overflow".into()))?;
        if payload.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: payload.len(),
            });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMap::new(height, width, dim, data)
    }
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMap::from_bytes(&bytes)
}

pub fn write_feature_map(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, map.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMap {
        let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.5 - 2.0).collect();
        FeatureMap::new(2, 2, 3, data).unwrap()
    }

    #[test]
    fn minimal_file_parses() {
        let bytes = sample().to_bytes();
        assert_eq!(bytes.len(), 16 + 48);
        let map = FeatureMap::from_bytes(&bytes).unwrap();
        assert_eq!((map.height(), map.width(), map.dim()), (2, 2, 3));
        assert_eq!(map.cell(1, 0), &[1.0, 1.5, 2.0]);
    }

    #[test]
    fn large_vit_geometry_header() {
        // 518x518 input, 14x14 patches, 1024 channels
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FMAP_MAGIC);
        bytes.push(FMAP_VERSION);
        for v in [37u32, 37, 1024] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.resize(16 + 37 * 37 * 1024 * 4, 0);
        let map = FeatureMap::from_bytes(&bytes).unwrap();
        assert_eq!((map.height(), map.width(), map.dim()), (37, 37, 1024));
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let bytes = sample().to_bytes();
        let err = FeatureMap::from_bytes(&bytes[..bytes.len() - 6]).unwrap_err();
        assert!(matches!(
            err,
            Error::SizeMismatch {
                expected: 48,
                found: 42
            }
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            FeatureMap::from_bytes(&bytes),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            FeatureMap::from_bytes(&bytes),
            Err(Error::MalformedHeader(_))
        ));
        let mut bytes = sample().to_bytes();
        bytes[3] = 9;
        assert!(matches!(
            FeatureMap::from_bytes(&bytes),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            FeatureMap::from_bytes(&bytes[..10]),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[16 + 4 * 5..16 + 4 * 6].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureMap::from_bytes(&bytes),
            Err(Error::NonFinite { index: 5 })
        ));
        assert!(FeatureMap::new(1, 1, 1, vec![f32::INFINITY]).is_err());
    }
}
