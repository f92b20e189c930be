//! `.bank` files. All integers and floats little-endian.
//!
//! ```text
//! header   : magic "BANK" | version u32 | dim u32 | category count u32
//! category : category_id u32 | instance count u32 | prototype f32 x dim
//!            then per instance: image_id u64 | instance_id u64 | vector f32 x dim
//! ```
//!
//! Categories appear in ascending id order and instances in ascending
//! `(image_id, instance_id)` order, so equal banks serialize to equal bytes.

use std::path::Path;

use super::{InstancePrototype, MemoryBank};
use crate::error::{Error, Result};

pub const BANK_MAGIC: &[u8; 4] = b"BANK";
pub const BANK_VERSION: u32 = 1;

impl MemoryBank {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BANK_MAGIC);
        for v in [BANK_VERSION, self.dim as u32, self.prototypes.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (category_id, proto) in &self.prototypes {
            let instances = &self.instances[category_id];
            out.extend_from_slice(&category_id.to_le_bytes());
            out.extend_from_slice(&(instances.len() as u32).to_le_bytes());
            proto
                .vector
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            for inst in instances {
                out.extend_from_slice(&inst.image_id.to_le_bytes());
                out.extend_from_slice(&inst.instance_id.to_le_bytes());
                inst.vector
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != BANK_MAGIC {
            return Err(Error::BankFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != BANK_VERSION {
            return Err(Error::BankFormat(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let categories = r.u32()? as usize;
        let mut instances = Vec::new();
        let mut stored = Vec::with_capacity(categories);
        for _ in 0..categories {
            let category_id = r.u32()?;
            let count = r.u32()? as usize;
            if count == 0 {
                return Err(Error::BankFormat(format!(
                    "category {category_id} has no instances"
                )));
            }
            stored.push((category_id, count, r.vector(dim)?));
            for _ in 0..count {
                let image_id = r.u64()?;
                let instance_id = r.u64()?;
                instances.push(InstancePrototype {
                    vector: r.vector(dim)?,
                    category_id,
                    image_id,
                    instance_id,
                });
            }
        }
        if r.at != bytes.len() {
            return Err(Error::BankFormat(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        let bank = MemoryBank::from_instances(dim, instances)?;
        if bank.prototypes.len() != categories {
            return Err(Error::BankFormat("duplicate category records".into()));
        }
        for (category_id, count, vector) in stored {
            let proto = &bank.prototypes[&category_id];
            let same_bits = proto
                .vector
                .iter()
                .zip(&vector)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if proto.instance_count != count || !same_bits {
                return Err(Error::BankFormat(format!(
                    "stored prototype for category {category_id} disagrees with its instances"
                )));
            }
        }
        Ok(bank)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::BankFormat("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vector(&mut self, dim: usize) -> Result<Vec<f32>> {
        let raw = self.take(dim.checked_mul(4).ok_or_else(|| {
            Error::BankFormat("dimension overflows".into())
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn write_bank(path: impl AsRef<Path>, bank: &MemoryBank) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bank.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<MemoryBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MemoryBank::from_bytes(&bytes)
}
