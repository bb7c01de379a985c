//! Joint geometric augmentation of (image, mask) pairs: elastic warps,
//! rotations and the crop around the counting frame.
//!
//! Images are resampled bilinearly and masks by nearest neighbor, always
//! through the same coordinate map, so masks stay binary and aligned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::disector::DisectorFrame;
use crate::error::{Error, Result};
use crate::raster::{Image, LabelMap, Rect, SegMask};
use crate::scalar::Scalar;

pub const ROTATION_STEP_DEG: u32 = 15;
pub const ELASTIC_BASES: usize = 2;
pub const FRAME_MARGIN: usize = 20;

/// Every rotation angle in degrees: 0, 15, ..., 345.
pub fn rotation_angles() -> Vec<u32> {
    (0..360 / ROTATION_STEP_DEG).map(|k| k * ROTATION_STEP_DEG).collect()
}

/// Number of pairs produced per input pair (original included).
pub fn variants_per_pair() -> usize {
    (1 + ELASTIC_BASES) * rotation_angles().len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl ElasticParams {
    /// alpha 34 / sigma 4 for a 128-pixel image, scaled with the larger
    /// image side.
    pub fn scaled_default(width: usize, height: usize, seed: u64) -> Self {
        let s = width.max(height) as f64 / 128.0;
        ElasticParams {
            alpha: 34.0 * s,
            sigma: 4.0 * s,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders.
fn blur(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, c)| c * values[y * w + clampi(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, c)| c * tmp[clampi(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Uniform(-1, 1) noise per pixel (all x components, then all y, raster
/// order), Gaussian-smoothed and scaled by alpha.
pub fn displacement_field(width: usize, height: usize, p: &ElasticParams) -> DisplacementField {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = width * height;
    let raw_x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let raw_y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (dx, dy) = if p.sigma > 0.0 {
        (
            blur(&raw_x, width, height, p.sigma),
            blur(&raw_y, width, height, p.sigma),
        )
    } else {
        (raw_x, raw_y)
    };
    DisplacementField {
        width,
        height,
        dx: dx.into_iter().map(|v| v * p.alpha).collect(),
        dy: dy.into_iter().map(|v| v * p.alpha).collect(),
    }
}

fn bilinear<T: Scalar>(img: &Image<T>, x: f64, y: f64, c: usize) -> T {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (T::of(x - x0 as f64), T::of(y - y0 as f64));
    let one = T::one();
    let at = |px: usize, py: usize| img.pixel(px, py)[c];
    at(x0, y0) * (one - fx) * (one - fy)
        + at(x1, y0) * fx * (one - fy)
        + at(x0, y1) * (one - fx) * fy
        + at(x1, y1) * fx * fy
}

/// Resample `img` and `mask` through `src(x, y)`, which returns the source
/// coordinate for each output pixel or `None` when it falls off the canvas.
fn resample<T: Scalar>(
    img: &Image<T>,
    mask: &SegMask,
    fill: &[T],
    src: impl Fn(usize, usize) -> Option<(f64, f64)>,
) -> (Image<T>, SegMask) {
    let (w, h) = img.dims();
    let ch = img.channels();
    let mut data = Vec::with_capacity(w * h * ch);
    let mut m = SegMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            match src(x, y) {
                Some((sx, sy)) => {
                    for c in 0..ch {
                        data.push(bilinear(img, sx, sy, c));
                    }
                    let (nx, ny) = (sx.round(), sy.round());
                    let (nx, ny) = (
                        nx.clamp(0.0, (w - 1) as f64) as usize,
                        ny.clamp(0.0, (h - 1) as f64) as usize,
                    );
                    m.set(x, y, mask.get(nx, ny));
                }
                None => data.extend_from_slice(fill),
            }
        }
    }
    (Image::new(w, h, ch, data).expect("same shape"), m)
}

fn check_pair<T: Scalar>(img: &Image<T>, mask: &SegMask) -> Result<()> {
    if img.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "image {:?} and mask {:?} differ in size",
            img.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// Warp image and mask with the same smoothed random displacement field.
/// Samples beyond the canvas clamp to the border.
pub fn elastic_deform<T: Scalar>(
    img: &Image<T>,
    mask: &SegMask,
    p: &ElasticParams,
) -> Result<(Image<T>, SegMask)> {
    check_pair(img, mask)?;
    if p.alpha < 0.0 || p.sigma <= 0.0 {
        return Err(Error::invalid("elastic alpha must be >= 0 and sigma > 0"));
    }
    let (w, h) = img.dims();
    let field = displacement_field(w, h, p);
    Ok(resample(img, mask, &[], |x, y| {
        let i = y * w + x;
        Some((x as f64 + field.dx[i], y as f64 + field.dy[i]))
    }))
}

fn border_mean<T: Scalar>(img: &Image<T>) -> Vec<T> {
    let (w, h) = img.dims();
    let ch = img.channels();
    let mut sum = vec![0.0f64; ch];
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                for (c, s) in sum.iter_mut().enumerate() {
                    *s += img.pixel(x, y)[c].f64();
                }
                n += 1;
            }
        }
    }
    sum.into_iter().map(|s| T::of(s / n as f64)).collect()
}

fn cos_sin(angle_deg: f64) -> (f64, f64) {
    // Exact values for right angles keep quarter turns lossless.
    match angle_deg.rem_euclid(360.0) {
        a if a == 0.0 => (1.0, 0.0),
        a if a == 90.0 => (0.0, 1.0),
        a if a == 180.0 => (-1.0, 0.0),
        a if a == 270.0 => (0.0, -1.0),
        a => (a.to_radians().cos(), a.to_radians().sin()),
    }
}

/// Rotate about the image center keeping the canvas size. Uncovered pixels
/// take the mean of the image border (image) or 0 (mask).
pub fn rotate_pair<T: Scalar>(
    img: &Image<T>,
    mask: &SegMask,
    angle_deg: f64,
) -> Result<(Image<T>, SegMask)> {
    check_pair(img, mask)?;
    if angle_deg == 0.0 {
        return Ok((img.clone(), mask.clone()));
    }
    let (w, h) = img.dims();
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let (c, s) = cos_sin(angle_deg);
    let fill = border_mean(img);
    let eps = 1e-9;
    Ok(resample(img, mask, &fill, |x, y| {
        // Inverse rotation maps output pixels back into the source.
        let (u, v) = (x as f64 - cx, y as f64 - cy);
        let sx = c * u + s * v + cx;
        let sy = -s * u + c * v + cy;
        if sx < -eps || sy < -eps || sx > (w - 1) as f64 + eps || sy > (h - 1) as f64 + eps {
            None
        } else {
            Some((sx, sy))
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Base,
    Elastic1,
    Elastic2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub base: BaseKind,
    pub angle: u32,
}

#[derive(Debug, Clone)]
pub struct AugmentedSet<T> {
    pub items: Vec<(Image<T>, SegMask, Provenance)>,
}

impl<T> AugmentedSet<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn elastic_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(2).wrapping_add(k)
}

fn base_pair<T: Scalar>(
    img: &Image<T>,
    mask: &SegMask,
    seed: u64,
    base: usize,
) -> Result<(Image<T>, SegMask, BaseKind)> {
    let (w, h) = img.dims();
    Ok(match base {
        0 => (img.clone(), mask.clone(), BaseKind::Base),
        1 | 2 => {
            let p = ElasticParams::scaled_default(w, h, elastic_seed(seed, base as u64 - 1));
            let (i, m) = elastic_deform(img, mask, &p)?;
            (i, m, if base == 1 { BaseKind::Elastic1 } else { BaseKind::Elastic2 })
        }
        _ => return Err(Error::invalid(format!("no augmentation base {base}"))),
    })
}

/// One member of [`augment_pair`]'s output, by index `base * 24 + angle`.
pub fn augment_variant<T: Scalar>(
    img: &Image<T>,
    mask: &SegMask,
    seed: u64,
    index: usize,
) -> Result<(Image<T>, SegMask, Provenance)> {
    check_pair(img, mask)?;
    let angles = rotation_angles();
    if index >= variants_per_pair() {
        return Err(Error::invalid(format!("augmentation index {index} out of range")));
    }
    let (bi, mi, base) = base_pair(img, mask, seed, index / angles.len())?;
    let angle = angles[index % angles.len()];
    let (ri, rm) = rotate_pair(&bi, &mi, angle as f64)?;
    Ok((ri, rm, Provenance { base, angle }))
}

/// The original plus two elastic warps (seeds `2s` and `2s+1`), each
/// rotated through every 15 degree step: 72 pairs, the first of which is
/// the untouched input.
pub fn augment_pair<T: Scalar>(img: &Image<T>, mask: &SegMask, seed: u64) -> Result<AugmentedSet<T>> {
    check_pair(img, mask)?;
    let angles = rotation_angles();
    let mut items = Vec::with_capacity(variants_per_pair());
    for b in 0..=ELASTIC_BASES {
        let (bi, mi, base) = base_pair(img, mask, seed, b)?;
        for &a in &angles {
            let (ri, rm) = rotate_pair(&bi, &mi, a as f64)?;
            items.push((ri, rm, Provenance { base, angle: a }));
        }
    }
    Ok(AugmentedSet { items })
}

/// Rasters that can be cut to a rectangle.
pub trait Crop: Sized {
    fn raster_dims(&self) -> (usize, usize);
    fn crop_rect(&self, r: &Rect) -> Result<Self>;
}

impl<T: Scalar> Crop for Image<T> {
    fn raster_dims(&self) -> (usize, usize) {
        self.dims()
    }
    fn crop_rect(&self, r: &Rect) -> Result<Self> {
        self.crop(r)
    }
}

impl Crop for SegMask {
    fn raster_dims(&self) -> (usize, usize) {
        self.dims()
    }
    fn crop_rect(&self, r: &Rect) -> Result<Self> {
        self.crop(r)
    }
}

impl Crop for LabelMap {
    fn raster_dims(&self) -> (usize, usize) {
        self.dims()
    }
    fn crop_rect(&self, r: &Rect) -> Result<Self> {
        self.crop(r)
    }
}

/// Frame rectangle grown by `margin` on every side, clamped to the image,
/// and the frame re-expressed relative to that rectangle.
pub fn frame_crop_rect(
    frame: &DisectorFrame,
    width: usize,
    height: usize,
    margin: usize,
) -> (Rect, DisectorFrame) {
    let r = frame.rect;
    let crop = Rect::new(
        r.x0.saturating_sub(margin),
        r.y0.saturating_sub(margin),
        (r.x1 + margin).min(width),
        (r.y1 + margin).min(height),
    );
    let moved = frame
        .translated(-(crop.x0 as isize), -(crop.y0 as isize))
        .expect("frame lies inside its crop");
    (crop, moved)
}

pub fn crop_to_frame<C: Crop>(
    raster: &C,
    frame: &DisectorFrame,
    margin: usize,
) -> Result<(C, DisectorFrame)> {
    let (w, h) = raster.raster_dims();
    frame.validate(w, h)?;
    let (rect, moved) = frame_crop_rect(frame, w, h, margin);
    Ok((raster.crop_rect(&rect)?, moved))
}
