//! Brute-force reference implementations over dense pixel grids, shared by
//! the integration tests. Nothing here calls into the library's geometry,
//! pooling, matching, merging or evaluation code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use refseg::tensor_io::BinaryMask;

/// Dense row-major pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Px {
    pub h: usize,
    pub w: usize,
    pub on: Vec<bool>,
}

impl Px {
    pub fn new(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut on = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                on[y * w + x] = f(y, x);
            }
        }
        Px { h, w, on }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.on[y * self.w + x]
    }

    pub fn from_mask(m: &BinaryMask) -> Self {
        let (h, w) = (m.height(), m.width());
        let mut on = vec![false; h * w];
        let mut pos = 0usize;
        let mut value = false;
        for &run in m.counts() {
            for k in pos..pos + run as usize {
                let (x, y) = (k / h, k % h);
                on[y * w + x] = value;
            }
            pos += run as usize;
            value = !value;
        }
        assert_eq!(pos, h * w);
        Px { h, w, on }
    }

    pub fn to_mask(&self) -> BinaryMask {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..self.w {
            for y in 0..self.h {
                if self.get(y, x) != current {
                    counts.push(run);
                    run = 0;
                    current = !current;
                }
                run += 1;
            }
        }
        counts.push(run);
        BinaryMask::from_counts(self.h, self.w, &counts).unwrap()
    }

    pub fn area(&self) -> u64 {
        self.on.iter().filter(|&&b| b).count() as u64
    }

    pub fn inter(&self, o: &Px) -> u64 {
        self.on.iter().zip(&o.on).filter(|(a, b)| **a && **b).count() as u64
    }

    /// `(x0, y0, x1, y1)` half-open.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0, y0, x1, y1)
    }
}

pub fn iou(a: &Px, b: &Px) -> f64 {
    let i = a.inter(b);
    let u = a.area() + b.area() - i;
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

pub fn ios(a: &Px, b: &Px) -> f64 {
    a.inter(b) as f64 / a.area() as f64
}

pub fn box_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let area = |r: (usize, usize, usize, usize)| ((r.2 - r.0) * (r.3 - r.1)) as f64;
    let iw = a.2.min(b.2).saturating_sub(a.0.max(b.0));
    let ih = a.3.min(b.3).saturating_sub(a.1.max(b.1));
    let i = (iw * ih) as f64;
    i / (area(a) + area(b) - i)
}

/// Pixel span of grid cell `i` of `cells` along `pixels`.
pub fn span(i: usize, cells: usize, pixels: usize) -> (usize, usize) {
    let start = ((i * pixels) as f64 / cells as f64).floor() as usize;
    let start = start.min(pixels - 1);
    let end = (((i + 1) * pixels) as f64 / cells as f64).floor() as usize;
    (start, end.max(start + 1))
}

/// Majority vote per cell; empty result falls back to the centroid cell.
pub fn resize(m: &Px, gh: usize, gw: usize) -> Vec<bool> {
    let mut out = vec![false; gh * gw];
    for v in 0..gh {
        for u in 0..gw {
            let (r0, r1) = span(v, gh, m.h);
            let (c0, c1) = span(u, gw, m.w);
            let mut fg = 0;
            for y in r0..r1 {
                for x in c0..c1 {
                    fg += m.get(y, x) as usize;
                }
            }
            out[v * gw + u] = 2 * fg >= (r1 - r0) * (c1 - c0);
        }
    }
    if !out.iter().any(|&b| b) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..m.h {
            for x in 0..m.w {
                if m.get(y, x) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        let (px, py) = ((sx / n).floor() as usize, (sy / n).floor() as usize);
        let u = (0..gw).find(|&u| span(u, gw, m.w).1 > px).unwrap_or(gw - 1);
        let v = (0..gh).find(|&v| span(v, gh, m.h).1 > py).unwrap_or(gh - 1);
        out[v * gw + u] = true;
    }
    out
}

/// Mean of the feature rows (`cells x d`, row-major) at active cells.
pub fn pool(features: &[f32], d: usize, active: &[bool]) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    let mut n = 0.0;
    for (cell, &a) in active.iter().enumerate() {
        if a {
            for k in 0..d {
                sum[k] += features[cell * d + k] as f64;
            }
            n += 1.0;
        }
    }
    sum.iter().map(|s| s / n).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

/// Best `(category, cosine)` with ties to the smaller category id.
pub fn classify(feature: &[f64], protos: &BTreeMap<u32, Vec<f64>>) -> (u32, f64) {
    let mut best = (u32::MAX, f64::NEG_INFINITY);
    for (&c, p) in protos {
        let s = cosine(feature, p);
        if s > best.1 || (s == best.1 && c < best.0) {
            best = (c, s);
        }
    }
    best
}

/// Instance prototypes grouped by category, then the class means.
pub fn class_prototypes(
    instances: &[(u32, Vec<f64>)],
) -> BTreeMap<u32, Vec<f64>> {
    let mut groups: BTreeMap<u32, Vec<&Vec<f64>>> = BTreeMap::new();
    for (c, v) in instances {
        groups.entry(*c).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(c, vs)| {
            let d = vs[0].len();
            let mean = (0..d)
                .map(|k| vs.iter().map(|v| v[k]).sum::<f64>() / vs.len() as f64)
                .collect();
            (c, mean)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OCand {
    pub mask: Px,
    pub feature: Vec<f64>,
    pub score: f64,
    pub cat: u32,
    pub rank: usize,
}

fn ranked(cands: &[OCand]) -> Vec<&OCand> {
    let mut order: Vec<&OCand> = cands.iter().collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.rank.cmp(&b.rank)));
    order
}

/// Greedy NMS; returns kept source ranks in rank order.
pub fn nms(cands: &[OCand], thresh: f64, agnostic: bool) -> Vec<usize> {
    let mut kept: Vec<&OCand> = Vec::new();
    for c in ranked(cands) {
        if kept
            .iter()
            .all(|k| !(agnostic || k.cat == c.cat) || iou(&k.mask, &c.mask) <= thresh)
        {
            kept.push(c);
        }
    }
    kept.iter().map(|c| c.rank).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Hard,
    Plain,
    Semantic,
}

/// Sequential decay against earlier same-category survivors; returns
/// `(rank, adjusted score)` sorted by adjusted score, truncated to `top_k`.
pub fn merge(cands: &[OCand], strategy: Strategy, floor: f64, top_k: usize) -> Vec<(usize, f64)> {
    let mut done: Vec<(&OCand, f64)> = Vec::new();
    for c in ranked(cands) {
        let mut s = c.score;
        let mut dropped = false;
        for (p, _) in done.iter().filter(|(p, _)| p.cat == c.cat) {
            let r = ios(&c.mask, &p.mask);
            match strategy {
                Strategy::Hard => {
                    if c.mask.inter(&p.mask) == c.mask.area() {
                        dropped = true;
                    }
                }
                Strategy::Plain => s *= (1.0 - r).sqrt(),
                Strategy::Semantic => {
                    let w = cosine(&c.feature, &p.feature).min(1.0).max(floor);
                    s *= (1.0 - r * w).sqrt();
                }
            }
        }
        if !dropped {
            done.push((c, s));
        }
    }
    let mut out: Vec<(usize, f64)> = done.iter().map(|(c, s)| (c.rank, *s)).collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out.truncate(top_k);
    out
}

#[derive(Debug, Clone)]
pub struct ODet {
    pub mask: Px,
    pub cat: u32,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct OImage {
    pub dets: Vec<ODet>,
    pub gts: Vec<(u32, Px)>,
}

/// AP per category at each threshold, by direct enumeration of the
/// precision/recall curve: interpolated precision at recall `r` is the best
/// precision at any cut-off reaching recall `r`.
pub fn coco_oracle(
    images: &[OImage],
    thresholds: &[f64],
    use_boxes: bool,
    max_dets: usize,
) -> BTreeMap<u32, Vec<f64>> {
    let overlap = |a: &Px, b: &Px| {
        if use_boxes {
            box_iou(a.bbox(), b.bbox())
        } else {
            iou(a, b)
        }
    };
    let cats: BTreeSet<u32> = images.iter().flat_map(|i| i.gts.iter().map(|g| g.0)).collect();
    let mut out = BTreeMap::new();
    for cat in cats {
        let n_gt = images
            .iter()
            .map(|i| i.gts.iter().filter(|g| g.0 == cat).count())
            .sum::<usize>();
        let mut aps = Vec::new();
        for &t in thresholds {
            let mut hits: Vec<(f64, bool)> = Vec::new();
            for img in images {
                let mut top: Vec<&ODet> = img.dets.iter().collect();
                top.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                top.truncate(max_dets);
                let dets: Vec<&ODet> = top.into_iter().filter(|d| d.cat == cat).collect();
                let gts: Vec<&Px> = img.gts.iter().filter(|g| g.0 == cat).map(|g| &g.1).collect();
                let mut used = vec![false; gts.len()];
                for d in dets {
                    let mut pick: Option<usize> = None;
                    let mut best = -1.0;
                    for (g, gt) in gts.iter().enumerate() {
                        let o = overlap(&d.mask, gt);
                        if !used[g] && o >= t && o > best {
                            best = o;
                            pick = Some(g);
                        }
                    }
                    if let Some(g) = pick {
                        used[g] = true;
                    }
                    hits.push((d.score, pick.is_some()));
                }
            }
            hits.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut curve = Vec::new();
            let mut tp = 0.0;
            for (k, &(_, hit)) in hits.iter().enumerate() {
                if hit {
                    tp += 1.0;
                }
                curve.push((tp / n_gt as f64, tp / (k + 1) as f64));
            }
            let mut total = 0.0;
            for j in 0..=100 {
                let r = j as f64 / 100.0;
                total += curve
                    .iter()
                    .filter(|(rc, _)| *rc >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
            }
            aps.push(total / 101.0);
        }
        out.insert(cat, aps);
    }
    out
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || a == b
}

/// Random mask: a union of up to three rectangles plus salt noise, never
/// empty.
pub fn random_px(rng: &mut impl Rng, h: usize, w: usize) -> Px {
    loop {
        let rects: Vec<(usize, usize, usize, usize)> = (0..rng.random_range(1..=3))
            .map(|_| {
                let x0 = rng.random_range(0..w);
                let y0 = rng.random_range(0..h);
                (x0, y0, rng.random_range(x0 + 1..=w), rng.random_range(y0 + 1..=h))
            })
            .collect();
        let salt: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.03)).collect();
        let px = Px::new(h, w, |y, x| {
            salt[y * w + x] || rects.iter().any(|r| x >= r.0 && x < r.2 && y >= r.1 && y < r.3)
        });
        if px.area() > 0 {
            return px;
        }
    }
}

/// Random axis-aligned rectangle mask.
pub fn random_rect(rng: &mut impl Rng, h: usize, w: usize) -> Px {
    let x0 = rng.random_range(0..w);
    let y0 = rng.random_range(0..h);
    let x1 = rng.random_range(x0 + 1..=w);
    let y1 = rng.random_range(y0 + 1..=h);
    Px::new(h, w, |y, x| x >= x0 && x < x1 && y >= y0 && y < y1)
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}
