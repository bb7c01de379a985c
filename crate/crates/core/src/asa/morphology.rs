//! Flat morphology with disk structuring elements.
//!
//! Out-of-image samples are ignored, which keeps erosion and dilation an
//! adjoint pair on the bounded domain (so opening and closing stay
//! idempotent).

use crate::raster::{Image, SegMask};
use crate::scalar::Scalar;

/// Offsets `(dx, dy)` with `dx^2 + dy^2 <= r^2`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

pub trait Morphology: Sized {
    fn erode(&self, radius: usize) -> Self;
    fn dilate(&self, radius: usize) -> Self;

    fn open(&self, radius: usize) -> Self {
        self.erode(radius).dilate(radius)
    }

    fn close(&self, radius: usize) -> Self {
        self.dilate(radius).erode(radius)
    }
}

fn filter<V: Copy>(
    width: usize,
    height: usize,
    get: impl Fn(usize, usize) -> V,
    offsets: &[(isize, isize)],
    pick: impl Fn(V, V) -> V,
) -> Vec<V> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = get(x as usize, y as usize);
            for &(dx, dy) in offsets {
                let (sx, sy) = (x + dx, y + dy);
                if sx >= 0 && sy >= 0 && (sx as usize) < width && (sy as usize) < height {
                    acc = pick(acc, get(sx as usize, sy as usize));
                }
            }
            out.push(acc);
        }
    }
    out
}

impl<T: Scalar> Morphology for Image<T> {
    fn erode(&self, radius: usize) -> Self {
        let data = filter(
            self.width(),
            self.height(),
            |x, y| self.get(x, y),
            &disk_offsets(radius),
            |a, b| a.min(b),
        );
        Image::new(self.width(), self.height(), 1, data).expect("same shape")
    }

    fn dilate(&self, radius: usize) -> Self {
        let data = filter(
            self.width(),
            self.height(),
            |x, y| self.get(x, y),
            &disk_offsets(radius),
            |a, b| a.max(b),
        );
        Image::new(self.width(), self.height(), 1, data).expect("same shape")
    }
}

impl Morphology for SegMask {
    fn erode(&self, radius: usize) -> Self {
        let data = filter(
            self.width(),
            self.height(),
            |x, y| self.get(x, y),
            &disk_offsets(radius),
            |a, b| a && b,
        );
        SegMask::from_vec(self.width(), self.height(), data.into_iter().map(u8::from).collect())
            .expect("same shape")
    }

    fn dilate(&self, radius: usize) -> Self {
        let data = filter(
            self.width(),
            self.height(),
            |x, y| self.get(x, y),
            &disk_offsets(radius),
            |a, b| a || b,
        );
        SegMask::from_vec(self.width(), self.height(), data.into_iter().map(u8::from).collect())
            .expect("same shape")
    }
}

/// Morphological gradient (dilation minus erosion) over the 3x3 square.
pub fn gradient<T: Scalar>(img: &Image<T>) -> Image<T> {
    let sq: Vec<(isize, isize)> = (-1..=1)
        .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
        .collect();
    let hi = filter(img.width(), img.height(), |x, y| img.get(x, y), &sq, |a, b| a.max(b));
    let lo = filter(img.width(), img.height(), |x, y| img.get(x, y), &sq, |a, b| a.min(b));
    let data = hi.into_iter().zip(lo).map(|(a, b)| a - b).collect();
    Image::new(img.width(), img.height(), 1, data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_one_disk_is_plus() {
        let mut offs = disk_offsets(1);
        offs.sort();
        assert_eq!(offs, vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn dilate_single_pixel() {
        let m = SegMask::from_fn(7, 7, |x, y| (x, y) == (3, 3));
        let d = m.dilate(1);
        assert_eq!(d.count(), 5);
        for (dx, dy) in disk_offsets(1) {
            assert!(d.get((3 + dx) as usize, (3 + dy) as usize));
        }
    }

    #[test]
    fn open_empty_is_empty() {
        assert!(SegMask::empty(6, 6).open(2).is_empty());
    }

    #[test]
    fn opening_and_closing_are_idempotent() {
        let m = SegMask::from_fn(24, 20, |x, y| (x * 7 + y * 3) % 5 < 3 || (x > 5 && x < 15));
        let o = m.open(2);
        assert_eq!(o.open(2), o);
        let c = m.close(2);
        assert_eq!(c.close(2), c);
        let img = Image::from_fn(16, 16, |x, y| ((x * 31 + y * 17) % 23) as f64 / 22.0);
        let oi = img.open(1);
        assert_eq!(oi.open(1), oi);
        for (a, b) in oi.data().iter().zip(img.data()) {
            assert!(a <= b);
        }
    }
}
