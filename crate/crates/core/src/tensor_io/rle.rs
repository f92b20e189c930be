//! Column-major run-length encoded binary masks.
//!
//! Runs alternate between 0s and 1s and always start with a (possibly empty)
//! run of 0s. Pixel `(y, x)` of an `h x w` mask sits at linear index `y + h * x`.

use crate::error::{Error, Result};

/// Binary mask stored as canonical column-major RLE counts.
///
/// Canonical means no zero-length runs except possibly the leading run of 0s.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    counts: Vec<u32>,
}

/// Dense row-major 0/1 grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl DenseMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        DenseMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }
}

impl BinaryMask {
    /// Builds a mask from run counts, validating the run sum and normalizing
    /// to canonical form.
    pub fn from_counts(height: usize, width: usize, counts: &[u32]) -> Result<Self> {
        let expected = (height * width) as u64;
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != expected {
            return Err(Error::RunSumMismatch { sum, expected });
        }
        Ok(BinaryMask {
            height,
            width,
            counts: canonicalize(counts),
        })
    }

    /// All-zero mask.
    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            counts: vec![(height * width) as u32],
        }
    }

    /// All-one mask.
    pub fn full(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            counts: vec![0, (height * width) as u32],
        }
    }

    /// Builds a mask from sorted, non-overlapping half-open linear intervals of 1s.
    pub(crate) fn from_intervals(
        height: usize,
        width: usize,
        intervals: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let n = height * width;
        let mut counts = Vec::new();
        let mut cursor = 0usize;
        for (start, end) in intervals {
            debug_assert!(start >= cursor && end <= n);
            if start == end {
                continue;
            }
            if start == cursor && !counts.is_empty() {
                // Adjacent to the previous run of 1s.
                *counts.last_mut().unwrap() += (end - start) as u32;
            } else {
                counts.push((start - cursor) as u32);
                counts.push((end - start) as u32);
            }
            cursor = end;
        }
        if cursor < n || counts.is_empty() {
            counts.push((n - cursor) as u32);
        }
        BinaryMask {
            height,
            width,
            counts,
        }
    }

    /// Axis-aligned rectangle `[x0, x1) x [y0, y1)` of 1s.
    pub fn rectangle(
        height: usize,
        width: usize,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    ) -> Self {
        let (x1, y1) = (x1.min(width), y1.min(height));
        if x0 >= x1 || y0 >= y1 {
            return BinaryMask::empty(height, width);
        }
        if y0 == 0 && y1 == height {
            return BinaryMask::from_intervals(height, width, [(x0 * height, x1 * height)]);
        }
        BinaryMask::from_intervals(
            height,
            width,
            (x0..x1).map(|x| (x * height + y0, x * height + y1)),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    /// Half-open linear index intervals covered by 1s, in increasing order.
    pub fn ones(&self) -> OnesIter<'_> {
        OnesIter {
            counts: &self.counts,
            index: 0,
            position: 0,
        }
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

pub struct OnesIter<'a> {
    counts: &'a [u32],
    index: usize,
    position: usize,
}

impl Iterator for OnesIter<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        while self.index + 1 < self.counts.len() {
            let zeros = self.counts[self.index] as usize;
            let ones = self.counts[self.index + 1] as usize;
            self.index += 2;
            let start = self.position + zeros;
            self.position = start + ones;
            if ones > 0 {
                return Some((start, start + ones));
            }
        }
        None
    }
}

fn canonicalize(counts: &[u32]) -> Vec<u32> {
    // out[j] always holds a run of value j % 2.
    let mut out: Vec<u32> = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let value = i % 2;
        match out.len() {
            0 if value == 1 => out.extend([0, c]),
            0 => out.push(c),
            len if (len - 1) % 2 == value => *out.last_mut().unwrap() += c,
            _ => out.push(c),
        }
    }
    if out.is_empty() {
        out.push(0);
    }
    out
}

/// Encodes a dense row-major 0/1 grid.
pub fn rle_encode(mask: &DenseMask) -> Result<BinaryMask> {
    let (h, w) = (mask.height, mask.width);
    if mask.data.len() != h * w {
        return Err(Error::DimMismatch(format!(
            "dense mask {h}x{w} has {} values",
            mask.data.len()
        )));
    }
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let value = mask.data[y * w + x];
            if value > 1 {
                return Err(Error::InvalidMaskValue {
                    index: y * w + x,
                    value,
                });
            }
            if value != current {
                counts.push(run);
                run = 0;
                current = value;
            }
            run += 1;
        }
    }
    counts.push(run);
    Ok(BinaryMask {
        height: h,
        width: w,
        counts,
    })
}

/// Decodes to a dense row-major 0/1 grid.
pub fn rle_decode(mask: &BinaryMask) -> DenseMask {
    let mut dense = DenseMask::zeros(mask.height, mask.width);
    for (start, end) in mask.ones() {
        for i in start..end {
            let (x, y) = (i / mask.height, i % mask.height);
            dense.data[y * mask.width + x] = 1;
        }
    }
    dense
}
