//! Review overlay: EDF in gray with the predicted mask contour, the frame
//! lines and the manual dots drawn on top.

use stereo_core::disector::{Annotation, EdgeKind};
use stereo_core::raster::{Image, SegMask};

pub const INCLUSION: [f32; 3] = [0.0, 1.0, 0.0];
pub const EXCLUSION: [f32; 3] = [1.0, 0.0, 0.0];
pub const DOT: [f32; 3] = [0.0, 0.0, 1.0];
pub const CONTOUR: [f32; 3] = [1.0, 1.0, 0.0];

const DOT_RADIUS: isize = 1;

fn paint(img: &mut Image<f32>, x: usize, y: usize, c: [f32; 3]) {
    let w = img.width();
    let i = (y * w + x) * 3;
    img.data_mut()[i..i + 3].copy_from_slice(&c);
}

/// Foreground pixels with a 4-neighbor outside the mask (or on the border).
pub fn contour_pixels(mask: &SegMask) -> Vec<(usize, usize)> {
    let (w, h) = mask.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if edge {
                out.push((x, y));
            }
        }
    }
    out
}

/// RGB overlay. Frame lines are drawn over the contour and dots over both.
pub fn render_overlay(edf: &Image<f32>, mask: Option<&SegMask>, ann: &Annotation) -> Image<f32> {
    let mut img = edf.to_grayscale().to_rgb();
    let (w, h) = img.dims();
    if let Some(m) = mask {
        for (x, y) in contour_pixels(m) {
            if x < w && y < h {
                paint(&mut img, x, y, CONTOUR);
            }
        }
    }
    let r = ann.frame.rect;
    for y in r.y0..r.y1.min(h) {
        for x in r.x0..r.x1.min(w) {
            match ann.frame.edge_at(x as isize, y as isize) {
                Some(EdgeKind::Inclusion) => paint(&mut img, x, y, INCLUSION),
                Some(EdgeKind::Exclusion) => paint(&mut img, x, y, EXCLUSION),
                None => {}
            }
        }
    }
    for d in &ann.dots {
        let (cx, cy) = (d[0].round() as isize, d[1].round() as isize);
        for dy in -DOT_RADIUS..=DOT_RADIUS {
            for dx in -DOT_RADIUS..=DOT_RADIUS {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    paint(&mut img, x as usize, y as usize, DOT);
                }
            }
        }
    }
    img
}
