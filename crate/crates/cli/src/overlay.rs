//! Lossless overlays: detections tinted per category with a score label at
//! the top-left corner of each box.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use refseg::merging::Detection;

const ALPHA: f32 = 0.45;
const BACKGROUND: [u8; 3] = [32, 32, 32];
const GLYPH_SCALE: u32 = 2;

/// 3x5 bitmaps for `0-9` and `.`, one row per entry, high bit on the left.
const GLYPHS: [[u8; 5]; 11] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
    [0b000, 0b000, 0b000, 0b000, 0b010],
];

fn category_color(category_id: u32) -> [u8; 3] {
    let h = category_id.wrapping_mul(2_654_435_761);
    [
        96 + (h >> 24) as u8 % 160,
        96 + (h >> 16) as u8 % 160,
        96 + (h >> 8) as u8 % 160,
    ]
}

fn blend(px: &mut Rgb<u8>, color: [u8; 3]) {
    for (c, t) in px.0.iter_mut().zip(color) {
        *c = ((1.0 - ALPHA) * *c as f32 + ALPHA * t as f32).round() as u8;
    }
}

fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str, color: [u8; 3]) {
    let mut x = x0;
    for ch in text.chars() {
        let glyph = match ch {
            '0'..='9' => GLYPHS[ch as usize - '0' as usize],
            '.' => GLYPHS[10],
            _ => continue,
        };
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                for dy in 0..GLYPH_SCALE {
                    for dx in 0..GLYPH_SCALE {
                        let (px, py) = (x + col * GLYPH_SCALE + dx, y0 + row as u32 * GLYPH_SCALE + dy);
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, Rgb(color));
                        }
                    }
                }
            }
        }
        x += 4 * GLYPH_SCALE;
    }
}

/// Renders detections, lowest score first so stronger ones stay on top.
pub fn render(height: usize, width: usize, detections: &[Detection]) -> RgbImage {
    let mut img = RgbImage::from_pixel(width as u32, height as u32, Rgb(BACKGROUND));
    for d in detections.iter().rev() {
        let color = category_color(d.category_id);
        for (start, end) in d.mask.ones() {
            for i in start..end {
                let (x, y) = ((i / height) as u32, (i % height) as u32);
                blend(img.get_pixel_mut(x, y), color);
            }
        }
    }
    for d in detections.iter().rev() {
        let [x, y, _, _] = d.bbox.to_xywh();
        draw_text(&mut img, x, y, &format!("{:.2}", d.score.max(0.0)), [255, 255, 255]);
    }
    img
}

pub fn write_overlay(path: &Path, height: usize, width: usize, detections: &[Detection]) -> Result<()> {
    render(height, width, detections)
        .save(path)
        .with_context(|| format!("writing overlay {}", path.display()))
}
