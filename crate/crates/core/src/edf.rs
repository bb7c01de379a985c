//! Extended depth of field: collapse a through-focus stack into one
//! all-in-focus image by per-pixel local-variance argmax.

use crate::error::{Error, Result};
use crate::raster::{Image, ImageStack};
use crate::scalar::Scalar;

pub const DEFAULT_FOCUS_WINDOW: usize = 9;
pub const DEFAULT_DEPTH_SMOOTH: usize = 5;

/// Per-pixel focus score (local intensity variance), same dims as the slice.
pub type FocusMap<T> = Image<T>;

/// Per-pixel index of the slice the output was copied from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub indices: Vec<usize>,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> usize {
        self.indices[y * self.width + x]
    }

    /// Depth indices scaled to `[0, 1]` for visualisation.
    pub fn to_image<T: Scalar>(&self, slices: usize) -> Image<T> {
        let denom = (slices.max(2) - 1) as f64;
        Image::from_fn(self.width, self.height, |x, y| {
            T::of(self.get(x, y) as f64 / denom)
        })
    }
}

fn check_window(window: usize, what: &str) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "{what} must be odd and at least 3, got {window}"
        )));
    }
    Ok(())
}

/// Variance of the `window`x`window` neighborhood around each pixel, with
/// replicated borders.
pub fn focus_measure<T: Scalar>(slice: &Image<T>, window: usize) -> Result<FocusMap<T>> {
    check_window(window, "focus window")?;
    if slice.channels() != 1 {
        return Err(Error::Shape("focus measure needs a grayscale slice".into()));
    }
    let r = (window / 2) as isize;
    let n = (window * window) as f64;
    Ok(Image::from_fn(slice.width(), slice.height(), |x, y| {
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for dy in -r..=r {
            for dx in -r..=r {
                let v = slice.get_clamped(x as isize + dx, y as isize + dy).f64();
                s += v;
                s2 += v * v;
            }
        }
        let mean = s / n;
        T::of((s2 / n - mean * mean).max(0.0))
    }))
}

fn median_filter(indices: &[usize], width: usize, height: usize, window: usize) -> Vec<usize> {
    let r = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    let mut out = Vec::with_capacity(indices.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            buf.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    let cx = (x + dx).clamp(0, width as isize - 1) as usize;
                    let cy = (y + dy).clamp(0, height as isize - 1) as usize;
                    buf.push(indices[cy * width + cx]);
                }
            }
            buf.sort_unstable();
            out.push(buf[buf.len() / 2]);
        }
    }
    out
}

/// Fuse a stack: per pixel pick the sharpest slice (ties go to the lowest
/// index), median-smooth the index map, then copy pixels from the chosen
/// slices.
pub fn edf_stack<T: Scalar>(
    stack: &ImageStack<T>,
    window: usize,
    smooth: usize,
) -> Result<(Image<T>, DepthMap)> {
    check_window(window, "focus window")?;
    check_window(smooth, "depth smoothing window")?;
    let (w, h) = stack.dims();
    let maps = stack
        .slices()
        .iter()
        .map(|s| focus_measure(s, window))
        .collect::<Result<Vec<_>>>()?;
    let mut best = vec![0usize; w * h];
    for (i, b) in best.iter_mut().enumerate() {
        let mut top = maps[0].data()[i];
        for (k, m) in maps.iter().enumerate().skip(1) {
            if m.data()[i] > top {
                top = m.data()[i];
                *b = k;
            }
        }
    }
    let indices = if stack.len() > 1 {
        median_filter(&best, w, h, smooth)
    } else {
        best
    };
    let img = Image::from_fn(w, h, |x, y| stack.slices()[indices[y * w + x]].get(x, y));
    Ok((
        img,
        DepthMap {
            width: w,
            height: h,
            indices,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_variance(img: &Image<f64>, x: usize, y: usize, window: usize) -> f64 {
        let r = (window / 2) as isize;
        let mut vals = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                vals.push(img.get_clamped(x as isize + dx, y as isize + dy));
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn constant_slice_has_zero_focus() {
        let img = Image::<f64>::filled(8, 6, 0.4);
        let f = focus_measure(&img, 3).unwrap();
        assert!(f.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn bad_windows_rejected() {
        let img = Image::<f64>::filled(4, 4, 0.0);
        assert!(focus_measure(&img, 4).is_err());
        assert!(focus_measure(&img, 0).is_err());
        assert!(focus_measure(&img, 1).is_err());
    }

    #[test]
    fn bright_pixel_peak_near_source() {
        let img = Image::from_fn(9, 9, |x, y| if (x, y) == (4, 4) { 1.0 } else { 0.0 });
        let f = focus_measure(&img, 3).unwrap();
        let peak = f.data().iter().cloned().fold(f64::MIN, f64::max);
        for y in 0..9 {
            for x in 0..9 {
                assert!((f.get(x, y) - brute_variance(&img, x, y, 3)).abs() < 1e-12);
                if (f.get(x, y) - peak).abs() < 1e-12 {
                    assert!(x.abs_diff(4) <= 1 && y.abs_diff(4) <= 1);
                }
            }
        }
    }

    #[test]
    fn contrast_doubling_quadruples_scores() {
        let img = Image::from_fn(7, 7, |x, y| 0.25 + 0.05 * ((x * 3 + y * 5) % 7) as f64);
        let doubled = img.map(|v| 2.0 * v - 0.25);
        let a = focus_measure(&img, 5).unwrap();
        let b = focus_measure(&doubled, 5).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((4.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_slice_is_identity() {
        let img = Image::from_fn(6, 5, |x, y| ((x * y) % 5) as f64 / 5.0);
        let stack = ImageStack::new(vec![img.clone()]).unwrap();
        let (out, depth) = edf_stack(&stack, 3, 5).unwrap();
        assert_eq!(out, img);
        assert!(depth.indices.iter().all(|&i| i == 0));
    }

    #[test]
    fn identical_slices_pick_lowest_index() {
        let img = Image::from_fn(6, 5, |x, y| ((x + 2 * y) % 3) as f64 / 3.0);
        let stack = ImageStack::new(vec![img.clone(), img.clone(), img.clone()]).unwrap();
        let (out, depth) = edf_stack(&stack, 3, 3).unwrap();
        assert_eq!(out, img);
        assert!(depth.indices.iter().all(|&i| i == 0));
    }

    fn box_blur(img: &Image<f64>) -> Image<f64> {
        Image::from_fn(img.width(), img.height(), |x, y| {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += img.get_clamped(x as isize + dx, y as isize + dy);
                }
            }
            s / 9.0
        })
    }

    #[test]
    fn half_sharp_stack_selects_by_side() {
        let (w, h) = (32, 16);
        let checker = Image::from_fn(w, h, |x, y| if (x + y) % 2 == 0 { 0.9 } else { 0.1 });
        let blurred = box_blur(&box_blur(&checker));
        let s0 = Image::from_fn(w, h, |x, y| {
            if x < w / 2 {
                checker.get(x, y)
            } else {
                blurred.get(x, y)
            }
        });
        let s1 = Image::from_fn(w, h, |x, y| {
            if x < w / 2 {
                blurred.get(x, y)
            } else {
                checker.get(x, y)
            }
        });
        let stack = ImageStack::new(vec![s0.clone(), s1.clone()]).unwrap();
        let (out, depth) = edf_stack(&stack, 3, 5).unwrap();
        for y in 2..h - 2 {
            for x in 2..w / 2 - 3 {
                let oracle = brute_variance(&s0, x, y, 3) >= brute_variance(&s1, x, y, 3);
                assert!(oracle);
                assert_eq!(depth.get(x, y), 0);
            }
            for x in w / 2 + 3..w - 2 {
                assert_eq!(depth.get(x, y), 1);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v = out.get(x, y);
                assert!(v == s0.get(x, y) || v == s1.get(x, y));
            }
        }
    }
}
