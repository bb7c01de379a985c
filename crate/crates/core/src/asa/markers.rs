//! Foreground/background marker extraction for the marker-controlled
//! watershed.

use crate::raster::{Image, LabelMap, SegMask};
use crate::scalar::Scalar;

use super::blobs::NEIGHBORS8;
use super::distance::distance_transform;
use super::morphology::Morphology;
use super::reconstruct::reconstruct_by_dilation;

/// Radius of the dilation whose complement forms the background marker.
pub const BACKGROUND_MARGIN: usize = 3;

/// Dynamic below which distance maxima are merged: `0.3 * sqrt(min/pi)`.
pub fn suppression_height(min_cell_size: usize) -> f64 {
    0.3 * (min_cell_size as f64 / std::f64::consts::PI).sqrt()
}

/// Label each 8-connected plateau of `img` (restricted to `domain`) that
/// has no strictly higher in-domain neighbor.
pub fn regional_maxima<T: Scalar>(img: &Image<T>, domain: &SegMask) -> LabelMap {
    let (w, h) = img.dims();
    let mut visited = vec![false; w * h];
    let mut out = LabelMap::empty(w, h);
    let mut next = 0u32;
    let mut plateau = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !domain.get(x, y) || visited[y * w + x] {
                continue;
            }
            let v = img.get(x, y);
            plateau.clear();
            stack.push((x, y));
            visited[y * w + x] = true;
            let mut is_max = true;
            while let Some((cx, cy)) = stack.pop() {
                plateau.push((cx, cy));
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !domain.get(nx, ny) {
                        continue;
                    }
                    let nv = img.get(nx, ny);
                    if nv > v {
                        is_max = false;
                    } else if nv == v && !visited[ny * w + nx] {
                        visited[ny * w + nx] = true;
                        stack.push((nx, ny));
                    }
                }
            }
            if is_max {
                next += 1;
                for &(px, py) in &plateau {
                    out.set(px, py, next);
                }
            }
        }
    }
    out
}

/// Regional maxima of the h-maxima transform `R_f(f - h)` over `domain`.
pub fn h_maxima<T: Scalar>(img: &Image<T>, h: f64, domain: &SegMask) -> LabelMap {
    let shifted = img.map(|v| v - T::of(h));
    let rec = reconstruct_by_dilation(&shifted, img, Some(domain)).expect("same dims");
    regional_maxima(&rec, domain)
}

/// Foreground markers are the h-suppressed maxima of the mask's distance
/// transform; the background marker is everything farther than
/// [`BACKGROUND_MARGIN`] pixels from the mask.
pub fn extract_markers(mask: &SegMask, min_cell_size: usize) -> (LabelMap, SegMask) {
    let (w, h) = mask.dims();
    let bg = mask.dilate(BACKGROUND_MARGIN).complement();
    if mask.is_empty() {
        return (LabelMap::empty(w, h), bg);
    }
    let dt: Image<f64> = distance_transform(mask);
    let fg = h_maxima(&dt, suppression_height(min_cell_size), mask);
    (fg, bg)
}
