//! Connected components, blob statistics and size filtering.

use serde::{Deserialize, Serialize};

use crate::raster::{LabelMap, Rect, SegMask};

pub const NEIGHBORS8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// One labeled region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub label: u32,
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
    pub bbox: Rect,
}

impl Blob {
    pub fn from_pixels(label: u32, pixels: Vec<(usize, usize)>) -> Blob {
        assert!(!pixels.is_empty(), "a blob needs at least one pixel");
        let n = pixels.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &pixels {
            sx += x as f64;
            sy += y as f64;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        Blob {
            label,
            pixels,
            centroid: (sx / n, sy / n),
            bbox: Rect::new(x0, y0, x1, y1),
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bbox.contains(x, y) && self.pixels.iter().any(|&p| p == (x, y))
    }
}

/// Blobs of every nonzero label, in ascending label order. Pixels are
/// listed in raster order.
pub fn blobs(labels: &LabelMap) -> Vec<Blob> {
    let max = labels.max_label() as usize;
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); max + 1];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let l = labels.get(x, y) as usize;
            if l != 0 {
                groups[l].push((x, y));
            }
        }
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(l, p)| Blob::from_pixels(l as u32, p))
        .collect()
}

/// 8-connected component labeling, labels assigned in raster order of
/// each component's first pixel.
pub fn connected_components(mask: &SegMask) -> LabelMap {
    let (w, h) = mask.dims();
    let mut out = LabelMap::empty(w, h);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || out.get(x, y) != 0 {
                continue;
            }
            next += 1;
            out.set(x, y, next);
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask.get(nx, ny) && out.get(nx, ny) == 0 {
                        out.set(nx, ny, next);
                        stack.push((nx, ny));
                    }
                }
            }
        }
    }
    out
}

/// Remove regions with area outside `[min_size, max_size]` and renumber
/// the survivors to `1..=L`.
pub fn size_filter(labels: &LabelMap, min_size: usize, max_size: usize) -> LabelMap {
    let mut area = vec![0usize; labels.max_label() as usize + 1];
    for &l in labels.data() {
        area[l as usize] += 1;
    }
    let mut out = labels.clone();
    for v in out.data_mut() {
        let a = area[*v as usize];
        if *v != 0 && (a < min_size || a > max_size) {
            *v = 0;
        }
    }
    out.compacted()
}
