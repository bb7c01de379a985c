//! Exact Euclidean distance transform (separable lower-envelope method).

use crate::raster::{Image, SegMask};
use crate::scalar::Scalar;

const INF: f64 = 1e20;

fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Distance from each foreground pixel to the nearest background pixel;
/// zero on background. Pixels beyond the image border count as background.
pub fn distance_transform<T: Scalar>(mask: &SegMask) -> Image<T> {
    let (w, h) = mask.dims();
    // Pad by one background pixel on every side.
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![INF; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let fg = x >= 1 && y >= 1 && x <= w && y <= h && mask.get(x - 1, y - 1);
            if !fg {
                grid[y * pw + x] = 0.0;
            }
        }
    }
    let n = pw.max(ph);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        envelope_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        envelope_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&out[..pw]);
    }
    Image::from_fn(w, h, |x, y| T::of(grid[(y + 1) * pw + x + 1].sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(mask: &SegMask) -> Vec<f64> {
        let (w, h) = mask.dims();
        let mut bg = Vec::new();
        for y in -1..=h as isize {
            for x in -1..=w as isize {
                let inside = x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h;
                if !inside || !mask.get(x as usize, y as usize) {
                    bg.push((x, y));
                }
            }
        }
        let mut out = Vec::new();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let d = bg
                    .iter()
                    .map(|&(bx, by)| (((bx - x).pow(2) + (by - y).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min);
                out.push(d);
            }
        }
        out
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..20u64 {
            let mask = SegMask::from_fn(13, 9, |x, y| {
                (x as u64 * 2654435761 + y as u64 * 40503 + seed * 977) % 7 < 5
            });
            let dt: Image<f64> = distance_transform(&mask);
            for (a, b) in dt.data().iter().zip(brute(&mask)) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn full_mask_distance_to_border() {
        let dt: Image<f64> = distance_transform(&SegMask::from_fn(5, 5, |_, _| true));
        assert_eq!(dt.get(2, 2), 3.0);
        assert_eq!(dt.get(0, 0), 1.0);
    }
}
