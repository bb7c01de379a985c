//! Grayscale reconstruction by geodesic dilation/erosion (8-connected).

use crate::error::{Error, Result};
use crate::raster::{Image, SegMask};
use crate::scalar::Scalar;

use super::morphology::Morphology;

const FORWARD: [(isize, isize); 4] = [(-1, -1), (0, -1), (1, -1), (-1, 0)];
const BACKWARD: [(isize, isize); 4] = [(1, 1), (0, 1), (-1, 1), (1, 0)];

/// Iterate `J = min(dilate8(J), mask)` to stability. Pixels outside
/// `domain` (when given) are neither updated nor used as neighbors.
pub fn reconstruct_by_dilation<T: Scalar>(
    marker: &Image<T>,
    mask: &Image<T>,
    domain: Option<&SegMask>,
) -> Result<Image<T>> {
    if marker.dims() != mask.dims() || domain.is_some_and(|d| d.dims() != mask.dims()) {
        return Err(Error::Shape("reconstruction inputs differ in size".into()));
    }
    let (w, h) = mask.dims();
    let inside = |x: usize, y: usize| domain.map_or(true, |d| d.get(x, y));
    let mut j: Vec<T> = marker
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&a, &b)| a.min(b))
        .collect();
    let m = mask.data();
    let mut sweep = |order: &mut dyn Iterator<Item = usize>, nbrs: &[(isize, isize)]| {
        let mut changed = false;
        for i in order {
            let (x, y) = (i % w, i / w);
            if !inside(x, y) {
                continue;
            }
            let mut v = j[i];
            for &(dx, dy) in nbrs {
                let (sx, sy) = (x as isize + dx, y as isize + dy);
                if sx < 0 || sy < 0 || sx as usize >= w || sy as usize >= h {
                    continue;
                }
                let (sx, sy) = (sx as usize, sy as usize);
                if inside(sx, sy) {
                    v = v.max(j[sy * w + sx]);
                }
            }
            let v = v.min(m[i]);
            if v != j[i] {
                j[i] = v;
                changed = true;
            }
        }
        changed
    };
    loop {
        let a = sweep(&mut (0..w * h), &FORWARD);
        let b = sweep(&mut (0..w * h).rev(), &BACKWARD);
        if !a && !b {
            break;
        }
    }
    Image::new(w, h, 1, j)
}

/// Dual of [`reconstruct_by_dilation`]: iterate `J = max(erode8(J), mask)`.
pub fn reconstruct_by_erosion<T: Scalar>(
    marker: &Image<T>,
    mask: &Image<T>,
    domain: Option<&SegMask>,
) -> Result<Image<T>> {
    let r = reconstruct_by_dilation(&marker.map(|v| -v), &mask.map(|v| -v), domain)?;
    Ok(r.map(|v| -v))
}

/// Erode, then reconstruct under the original. Removes bright structures
/// smaller than the disk while restoring the contours of larger ones.
pub fn opening_by_reconstruction<T: Scalar>(img: &Image<T>, radius: usize) -> Result<Image<T>> {
    reconstruct_by_dilation(&img.erode(radius), img, None)
}

pub fn closing_by_reconstruction<T: Scalar>(img: &Image<T>, radius: usize) -> Result<Image<T>> {
    reconstruct_by_erosion(&img.dilate(radius), img, None)
}
