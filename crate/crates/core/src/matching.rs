//! Cosine matching of pooled candidate features against class prototypes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{resize_mask_to_grid, FeatureGridMask};
use crate::memory_bank::{masked_feature_pool, MemoryBank};
use crate::tensor_io::{BinaryMask, FeatureMap};

/// A scored mask proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub mask: BinaryMask,
    pub grid_mask: FeatureGridMask,
    /// Pooled, L2-normalized feature.
    pub feature: Vec<f32>,
    /// Best cosine similarity over all class prototypes.
    pub score: f64,
    pub category_id: u32,
    /// Index of the proposal in the input list.
    pub source_rank: usize,
}

/// Masked average pooling followed by L2 normalization.
pub fn pool_normalize(feat: &FeatureMap, grid_mask: &FeatureGridMask) -> Result<Vec<f32>> {
    let pooled = masked_feature_pool(feat, grid_mask)?;
    let norm = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateFeature);
    }
    Ok(pooled.iter().map(|v| (v / norm) as f32).collect())
}

/// Class prototypes normalized once for repeated scoring.
#[derive(Debug, Clone)]
pub struct Matcher {
    dim: usize,
    categories: Vec<u32>,
    /// Row-major `categories.len() x dim` unit vectors.
    prototypes: Vec<f64>,
}

impl Matcher {
    pub fn new(bank: &MemoryBank) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::EmptyBank);
        }
        let dim = bank.dim();
        let mut categories = Vec::with_capacity(bank.len());
        let mut prototypes = Vec::with_capacity(bank.len() * dim);
        for (&category_id, proto) in bank.prototypes() {
            let norm = proto
                .vector
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateFeature);
            }
            categories.push(category_id);
            prototypes.extend(proto.vector.iter().map(|&v| v as f64 / norm));
        }
        Ok(Matcher {
            dim,
            categories,
            prototypes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Best `(category_id, cosine)`; ties go to the lowest category id.
    pub fn score(&self, feature: &[f32]) -> Result<(u32, f64)> {
        if feature.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "feature has length {}, bank dim is {}",
                feature.len(),
                self.dim
            )));
        }
        let mut best = (self.categories[0], f64::NEG_INFINITY);
        for (&category_id, proto) in self
            .categories
            .iter()
            .zip(self.prototypes.chunks_exact(self.dim))
        {
            let s = dot(proto, feature);
            if s > best.1 {
                best = (category_id, s);
            }
        }
        Ok(best)
    }
}

/// Dot product with eight independent partial sums, combined pairwise.
fn dot(a: &[f64], b: &[f32]) -> f64 {
    let mut acc = [0f64; 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k] as f64;
        }
    }
    let mut tail = 0.0;
    for (x, &y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y as f64;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Scores one unit feature against every class prototype.
pub fn score_candidate(feature: &[f32], bank: &MemoryBank) -> Result<(u32, f64)> {
    Matcher::new(bank)?.score(feature)
}

/// Resizes, pools and scores every proposal. Empty proposals and proposals
/// with a zero pooled feature are dropped; survivors keep input order.
pub fn classify_all(
    feat: &FeatureMap,
    proposals: &[BinaryMask],
    bank: &MemoryBank,
) -> Result<Vec<Candidate>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let matcher = Matcher::new(bank)?;
    if feat.dim() != matcher.dim() {
        return Err(Error::DimMismatch(format!(
            "feature map dim {} vs bank dim {}",
            feat.dim(),
            matcher.dim()
        )));
    }
    if let Some(m) = proposals.iter().find(|m| !m.same_dims(&proposals[0])) {
        return Err(Error::DimMismatch(format!(
            "proposals mix {}x{} and {}x{} masks",
            proposals[0].height(),
            proposals[0].width(),
            m.height(),
            m.width()
        )));
    }
    let scored: Vec<Option<Candidate>> = proposals
        .par_iter()
        .enumerate()
        .map(|(rank, mask)| classify_one(feat, &matcher, rank, mask))
        .collect::<Result<_>>()?;
    Ok(scored.into_iter().flatten().collect())
}

fn classify_one(
    feat: &FeatureMap,
    matcher: &Matcher,
    rank: usize,
    mask: &BinaryMask,
) -> Result<Option<Candidate>> {
    if mask.area() == 0 {
        log::debug!("dropping proposal {rank}: empty mask");
        return Ok(None);
    }
    let grid_mask = resize_mask_to_grid(mask, feat.height(), feat.width())?;
    let feature = match pool_normalize(feat, &grid_mask) {
        Ok(f) => f,
        Err(Error::DegenerateFeature) => {
            log::debug!("dropping proposal {rank}: zero pooled feature");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let (category_id, score) = matcher.score(&feature)?;
    Ok(Some(Candidate {
        mask: mask.clone(),
        grid_mask,
        feature,
        score,
        category_id,
        source_rank: rank,
    }))
}
