//! Mask resizing to feature-grid resolution, overlap measures and boxes.
//!
//! All overlap measures run directly on RLE intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::BinaryMask;

/// Binary mask at feature-grid resolution, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGridMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl FeatureGridMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimMismatch(format!(
                "grid mask {height}x{width} has {} cells",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidMaskValue {
                index,
                value: data[index],
            });
        }
        Ok(FeatureGridMask {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, v: usize, u: usize) -> u8 {
        self.data[v * self.width + u]
    }

    pub fn active_count(&self) -> usize {
        self.data.iter().filter(|&&c| c == 1).count()
    }

    /// Row-major indices of active cells, ascending.
    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 1)
            .map(|(i, _)| i)
    }
}

/// Half-open pixel box `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// `[x, y, w, h]` as used by detection-results files.
    pub fn to_xywh(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).map_or(0, |b| b.area());
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Pixel span `[start, end)` covered by grid cell `index` out of `cells`
/// along an axis of `pixels` pixels. Spans are non-decreasing in both ends and
/// never empty; when `pixels >= cells` they partition the axis.
#[inline]
pub fn cell_span(index: usize, cells: usize, pixels: usize) -> (usize, usize) {
    let start = (index * pixels / cells).min(pixels - 1);
    let end = ((index + 1) * pixels / cells).max(start + 1);
    (start, end)
}

/// Downsamples a mask to a `grid_h x grid_w` grid.
///
/// A cell is active when at least half of the pixels in its span are
/// foreground. If that leaves the grid empty, the cell containing the mask
/// centroid is activated so small instances are not lost.
pub fn resize_mask_to_grid(
    mask: &BinaryMask,
    grid_h: usize,
    grid_w: usize,
) -> Result<FeatureGridMask> {
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::DimMismatch(format!(
            "grid dims must be positive, got {grid_h}x{grid_w}"
        )));
    }
    let (h, w) = (mask.height(), mask.width());
    if h == 0 || w == 0 || mask.area() == 0 {
        return Err(Error::EmptyMask);
    }

    let row_spans: Vec<(usize, usize)> = (0..grid_h).map(|v| cell_span(v, grid_h, h)).collect();
    let col_spans: Vec<(usize, usize)> = (0..grid_w).map(|u| cell_span(u, grid_w, w)).collect();

    let mut counts = vec![0u64; grid_h * grid_w];
    // Sums of (2x + 1) and (2y + 1) over foreground pixels, for the centroid.
    let (mut sum_x2, mut sum_y2) = (0u128, 0u128);
    let (mut v_min, mut v_max, mut u_min, mut u_max) = (grid_h, 0, grid_w, 0);
    let (mut u_lo, mut u_hi, mut col_x) = (0usize, 0usize, usize::MAX);
    // Identical column runs in the same grid columns are added in one pass.
    let mut pending: Option<(usize, usize, usize, usize, u64)> = None;
    let mut flush = |run: (usize, usize, usize, usize, u64), counts: &mut [u64]| {
        let (y0, y1, lo, hi, repeat) = run;
        let mut v = row_spans.partition_point(|s| s.1 <= y0);
        v_min = v_min.min(v);
        while v < grid_h && row_spans[v].0 < y1 {
            let overlap = (y1.min(row_spans[v].1) - y0.max(row_spans[v].0)) as u64 * repeat;
            for c in &mut counts[v * grid_w + lo..v * grid_w + hi] {
                *c += overlap;
            }
            v += 1;
        }
        v_max = v_max.max(v);
    };

    for (start, end) in mask.ones() {
        let first_col = start / h;
        let last_col = (end - 1) / h;
        for x in first_col..=last_col {
            let y0 = start.max(x * h) - x * h;
            let y1 = end.min((x + 1) * h) - x * h;
            let len = (y1 - y0) as u128;
            sum_x2 += (2 * x as u128 + 1) * len;
            sum_y2 += (y1 as u128) * (y1 as u128) - (y0 as u128) * (y0 as u128);

            if x != col_x {
                col_x = x;
                u_lo = col_spans.partition_point(|s| s.1 <= x);
                u_hi = col_spans.partition_point(|s| s.0 <= x);
                u_min = u_min.min(u_lo);
                u_max = u_max.max(u_hi);
            }
            pending = match pending {
                Some((py0, py1, plo, phi, n)) if (py0, py1, plo, phi) == (y0, y1, u_lo, u_hi) => {
                    Some((py0, py1, plo, phi, n + 1))
                }
                Some(run) => {
                    flush(run, &mut counts);
                    Some((y0, y1, u_lo, u_hi, 1))
                }
                None => Some((y0, y1, u_lo, u_hi, 1)),
            };
        }
    }
    if let Some(run) = pending {
        flush(run, &mut counts);
    }

    let mut data = vec![0u8; grid_h * grid_w];
    for v in v_min..v_max {
        let rs = row_spans[v];
        for u in u_min..u_max {
            let cs = col_spans[u];
            let cell_area = ((rs.1 - rs.0) * (cs.1 - cs.0)) as u64;
            if 2 * counts[v * grid_w + u] >= cell_area {
                data[v * grid_w + u] = 1;
            }
        }
    }

    if data.iter().all(|&c| c == 0) {
        let area = mask.area() as u128;
        let px = (sum_x2 / (2 * area)) as usize;
        let py = (sum_y2 / (2 * area)) as usize;
        let u = col_spans.partition_point(|s| s.1 <= px).min(grid_w - 1);
        let v = row_spans.partition_point(|s| s.1 <= py).min(grid_h - 1);
        data[v * grid_w + u] = 1;
    }

    Ok(FeatureGridMask {
        height: grid_h,
        width: grid_w,
        data,
    })
}

/// Tightest box around the foreground.
pub fn mask_to_bbox(mask: &BinaryMask) -> Result<BBox> {
    let h = mask.height();
    let mut ones = mask.ones();
    let first = ones.next().ok_or(Error::EmptyMask)?;
    let (mut y_min, mut y_max) = (usize::MAX, 0usize);
    let mut last_end = first.1;
    let mut update = |(s, e): (usize, usize)| {
        if s / h != (e - 1) / h {
            y_min = 0;
            y_max = h;
        } else {
            y_min = y_min.min(s % h);
            y_max = y_max.max((e - 1) % h + 1);
        }
    };
    update(first);
    for iv in ones {
        update(iv);
        last_end = iv.1;
    }
    Ok(BBox {
        x_min: (first.0 / h) as u32,
        y_min: y_min as u32,
        x_max: ((last_end - 1) / h + 1) as u32,
        y_max: y_max as u32,
    })
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimMismatch(format!(
            "masks are {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn intersect_intervals(
    a: impl Iterator<Item = (usize, usize)>,
    b: impl Iterator<Item = (usize, usize)>,
) -> u64 {
    let mut a = a.peekable();
    let mut b = b.peekable();
    let mut total = 0u64;
    while let (Some(&(a0, a1)), Some(&(b0, b1))) = (a.peek(), b.peek()) {
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        if lo < hi {
            total += (hi - lo) as u64;
        }
        if a1 <= b1 {
            a.next();
        } else {
            b.next();
        }
    }
    total
}

/// Number of pixels set in both masks.
pub fn intersection_area(a: &BinaryMask, b: &BinaryMask) -> Result<u64> {
    check_dims(a, b)?;
    Ok(intersect_intervals(a.ones(), b.ones()))
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = intersection_area(a, b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(inter as f64 / union as f64)
}

/// Intersection over self: `|a ∩ b| / |a|`. Asymmetric.
pub fn intersection_over_self(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a, b)?;
    let area = a.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(intersect_intervals(a.ones(), b.ones()) as f64 / area as f64)
}

/// Pixel union of two masks.
pub fn mask_union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    check_dims(a, b)?;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    let mut ia = a.ones().peekable();
    let mut ib = b.ones().peekable();
    loop {
        let next = match (ia.peek(), ib.peek()) {
            (Some(&x), Some(&y)) => {
                if x.0 <= y.0 {
                    ia.next()
                } else {
                    ib.next()
                }
            }
            (Some(_), None) => ia.next(),
            (None, Some(_)) => ib.next(),
            (None, None) => break,
        }
        .unwrap();
        match merged.last_mut() {
            Some(last) if next.0 <= last.1 => last.1 = last.1.max(next.1),
            _ => merged.push(next),
        }
    }
    Ok(BinaryMask::from_intervals(a.height(), a.width(), merged))
}

/// A mask with cached area, box and interval list for repeated pairwise
/// overlap queries within one image.
#[derive(Debug, Clone)]
pub struct IndexedMask {
    height: usize,
    width: usize,
    area: u64,
    bbox: BBox,
    intervals: Vec<(usize, usize)>,
}

impl IndexedMask {
    pub fn new(mask: &BinaryMask) -> Result<Self> {
        Ok(IndexedMask {
            height: mask.height(),
            width: mask.width(),
            area: mask.area(),
            bbox: mask_to_bbox(mask)?,
            intervals: mask.ones().collect(),
        })
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    /// Intersection area, scanning only the columns shared by both boxes.
    pub fn intersection(&self, other: &IndexedMask) -> u64 {
        debug_assert!(self.height == other.height && self.width == other.width);
        let Some(shared) = self.bbox.intersection(&other.bbox) else {
            return 0;
        };
        let h = self.height;
        let lo = shared.x_min as usize * h;
        let hi = shared.x_max as usize * h;
        intersect_intervals(
            window(&self.intervals, lo, hi).iter().copied(),
            window(&other.intervals, lo, hi).iter().copied(),
        )
    }

    pub fn iou(&self, other: &IndexedMask) -> f64 {
        let inter = self.intersection(other);
        inter as f64 / (self.area + other.area - inter) as f64
    }

    /// `self.iou(other) > thresh`, skipping the exact intersection when the
    /// box overlap alone rules it out.
    pub fn iou_exceeds(&self, other: &IndexedMask, thresh: f64) -> bool {
        let Some(shared) = self.bbox.intersection(&other.bbox) else {
            return false;
        };
        let bound = shared.area().min(self.area).min(other.area);
        if (bound as f64 / (self.area + other.area - bound) as f64) <= thresh {
            return false;
        }
        self.iou(other) > thresh
    }

    pub fn ios(&self, other: &IndexedMask) -> f64 {
        self.intersection(other) as f64 / self.area as f64
    }
}

/// Intervals that may intersect the linear range `[lo, hi)`.
fn window(ivs: &[(usize, usize)], lo: usize, hi: usize) -> &[(usize, usize)] {
    let first = ivs.partition_point(|iv| iv.1 <= lo);
    let last = ivs.partition_point(|iv| iv.0 < hi);
    &ivs[first..last.max(first)]
}
