//! Image containers, color conversion, cropping and PNG I/O.
//!
//! Pixel values live in `[0, 1]`; 8-bit files map byte `k` to `k / 255`.
//! Binary masks are stored on disk as `{0, 255}` and label maps as 16-bit
//! grayscale.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned pixel rectangle, inclusive-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Rect::new(0, 0, width, height)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn is_valid_in(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Re-express `inner` (given relative to `self`) in the parent frame.
    pub fn offset(&self, inner: &Rect) -> Rect {
        Rect::new(
            self.x0 + inner.x0,
            self.y0 + inner.y0,
            self.x0 + inner.x1,
            self.y0 + inner.y1,
        )
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.is_valid_in(width, height) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(format!(
                "rect {:?} does not fit a {}x{} raster",
                self, width, height
            )))
        }
    }
}

/// Row-major raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image dimensions must be at least 1x1".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image from a row-major buffer; panics on length mismatch.
    pub fn from_vec_gray(width: usize, height: usize, data: Vec<T>) -> Self {
        Image::new(width, height, 1, data).expect("buffer length must equal width*height")
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Image {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Grayscale accessor; panics on RGB images.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x] = v;
    }

    /// Sample at integer coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn convert<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Luminance with Rec. 601 weights. Grayscale input passes through.
    pub fn to_grayscale(&self) -> Image<T> {
        if self.channels == 1 {
            return self.clone();
        }
        let (wr, wg, wb) = (T::of(0.299), T::of(0.587), T::of(0.114));
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| wr * p[0] + wg * p[1] + wb * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Gray image replicated to three channels.
    pub fn to_rgb(&self) -> Image<T> {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn crop(&self, r: &Rect) -> Result<Image<T>> {
        r.check(self.width, self.height)?;
        let c = self.channels;
        let mut data = Vec::with_capacity(r.width() * r.height() * c);
        for y in r.y0..r.y1 {
            let start = (y * self.width + r.x0) * c;
            data.extend_from_slice(&self.data[start..start + r.width() * c]);
        }
        Ok(Image {
            width: r.width(),
            height: r.height(),
            channels: c,
            data,
        })
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    pub fn mean(&self) -> T {
        let s: f64 = self.data.iter().map(|v| v.f64()).sum();
        T::of(s / self.data.len() as f64)
    }
}

/// Through-focus stack of same-shaped grayscale slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack<T> {
    slices: Vec<Image<T>>,
}

impl<T: Scalar> ImageStack<T> {
    pub fn new(slices: Vec<Image<T>>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::invalid("an image stack needs at least one slice"))?;
        let dims = first.dims();
        for (i, s) in slices.iter().enumerate() {
            if s.channels() != 1 {
                return Err(Error::Shape(format!("slice {i} is not grayscale")));
            }
            if s.dims() != dims {
                return Err(Error::Shape(format!(
                    "slice {i} is {:?}, expected {:?}",
                    s.dims(),
                    dims
                )));
            }
        }
        Ok(ImageStack { slices })
    }

    pub fn slices(&self) -> &[Image<T>] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }
}

/// Binary foreground mask; each sample is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SegMask {
    pub fn empty(width: usize, height: usize) -> Self {
        SegMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = SegMask::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.data[y * width + x] = 1;
                }
            }
        }
        m
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape("mask length does not match dimensions".into()));
        }
        Ok(SegMask {
            width,
            height,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> SegMask {
        SegMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn crop(&self, r: &Rect) -> Result<SegMask> {
        r.check(self.width, self.height)?;
        let mut data = Vec::with_capacity(r.width() * r.height());
        for y in r.y0..r.y1 {
            let start = y * self.width + r.x0;
            data.extend_from_slice(&self.data[start..start + r.width()]);
        }
        Ok(SegMask {
            width: r.width(),
            height: r.height(),
            data,
        })
    }

    /// Mask as a {0,1} grayscale image.
    pub fn to_image<T: Scalar>(&self) -> Image<T> {
        Image::from_fn(self.width, self.height, |x, y| {
            if self.get(x, y) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Pixels with value >= 0.5 become foreground.
    pub fn from_image<T: Scalar>(img: &Image<T>) -> SegMask {
        let half = T::of(0.5);
        SegMask::from_fn(img.width(), img.height(), |x, y| img.get(x, y) >= half)
    }
}

/// Per-pixel integer labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn empty(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape("label map length does not match dimensions".into()));
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u32) -> Self {
        let mut m = LabelMap::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct nonzero labels.
    pub fn labels(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.data.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn region_count(&self) -> usize {
        self.labels().len()
    }

    pub fn foreground(&self) -> SegMask {
        SegMask::from_fn(self.width, self.height, |x, y| self.get(x, y) != 0)
    }

    /// Renumber labels to `1..=L` preserving their relative order.
    pub fn compacted(&self) -> LabelMap {
        let labels = self.labels();
        let mut data = self.data.clone();
        for v in data.iter_mut() {
            if *v != 0 {
                *v = labels.binary_search(v).map(|i| i as u32 + 1).unwrap_or(0);
            }
        }
        LabelMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn crop(&self, r: &Rect) -> Result<LabelMap> {
        r.check(self.width, self.height)?;
        Ok(LabelMap::from_fn(r.width(), r.height(), |x, y| {
            self.get(x + r.x0, y + r.y0)
        }))
    }
}

fn open_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let decode_err = |e: png::DecodingError| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn encode_into<W: std::io::Write>(
    out: W,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> std::result::Result<(), png::EncodingError> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    enc.set_compression(png::Compression::Balanced);
    let mut writer = enc.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_into(BufWriter::new(file), width, height, color, depth, bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// In-memory 8-bit PNG of a grayscale or RGB image (values clamped to `[0, 1]`).
pub fn encode_png<T: Scalar>(img: &Image<T>) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let color = if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    let mut out = Vec::new();
    encode_into(&mut out, img.width(), img.height(), color, png::BitDepth::Eight, &bytes).map_err(|e| {
        Error::Decode {
            path: "<memory>".into(),
            reason: e.to_string(),
        }
    })?;
    Ok(out)
}

/// Load an 8-bit grayscale or RGB PNG with values scaled to `[0, 1]`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let (info, buf) = open_png(path)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(info.bit_depth as u8));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::UnsupportedFormat(format!("{other:?} color type"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut data = Vec::with_capacity(w * h * channels);
    let scale = T::of(255.0);
    for row in buf.chunks_exact(stride).take(h) {
        data.extend(row[..w * channels].iter().map(|&b| T::of(b as f64) / scale));
    }
    Image::new(w, h, channels, data)
}

#[inline]
fn quantize<T: Scalar>(v: T) -> u8 {
    (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an image as an 8-bit PNG; values are clamped to `[0, 1]` and rounded.
pub fn save_image<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let color = if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    write_png(
        path.as_ref(),
        img.width(),
        img.height(),
        color,
        png::BitDepth::Eight,
        &bytes,
    )
}

/// Any nonzero sample is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<SegMask> {
    let img: Image<f32> = load_image(path)?;
    let gray = img.to_grayscale();
    Ok(SegMask::from_fn(gray.width(), gray.height(), |x, y| {
        gray.get(x, y) > 0.0
    }))
}

pub fn save_mask(mask: &SegMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    write_png(
        path.as_ref(),
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &bytes,
    )
}

/// Label maps are 16-bit grayscale; 8-bit grayscale input is also accepted.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let (info, buf) = open_png(path)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(
            "label maps must be single-channel".into(),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut data = Vec::with_capacity(w * h);
    match info.bit_depth {
        png::BitDepth::Eight => {
            for row in buf.chunks_exact(stride).take(h) {
                data.extend(row[..w].iter().map(|&b| b as u32));
            }
        }
        png::BitDepth::Sixteen => {
            for row in buf.chunks_exact(stride).take(h) {
                data.extend(
                    row[..2 * w]
                        .chunks_exact(2)
                        .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32),
                );
            }
        }
        other => return Err(Error::UnsupportedBitDepth(other as u8)),
    }
    LabelMap::from_vec(w, h, data)
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    if labels.max_label() > u16::MAX as u32 {
        return Err(Error::invalid("label map has more than 65535 labels"));
    }
    let bytes: Vec<u8> = labels
        .data()
        .iter()
        .flat_map(|&l| (l as u16).to_be_bytes())
        .collect();
    write_png(
        path.as_ref(),
        labels.width(),
        labels.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_weights() {
        let img = Image::<f64>::new(2, 1, 3, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = img.to_grayscale();
        assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((g.get(1, 0) - 0.299).abs() < 1e-12);
    }

    #[test]
    fn grayscale_passthrough() {
        let img = Image::from_fn(3, 2, |x, y| (x + y) as f64 / 4.0);
        assert_eq!(img.to_grayscale(), img);
    }

    #[test]
    fn crop_full_and_single() {
        let img = Image::from_fn(5, 4, |x, y| (x * 7 + y) as f64 / 40.0);
        assert_eq!(img.crop(&Rect::full(5, 4)).unwrap(), img);
        let p = img.crop(&Rect::new(0, 0, 1, 1)).unwrap();
        assert_eq!(p.dims(), (1, 1));
        assert_eq!(p.get(0, 0), img.get(0, 0));
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = Image::<f64>::filled(4, 4, 0.5);
        assert!(matches!(
            img.crop(&Rect::new(2, 2, 5, 3)),
            Err(Error::OutOfBounds(_))
        ));
        assert!(img.crop(&Rect::new(2, 2, 2, 3)).is_err());
    }

    #[test]
    fn image_rejects_bad_shapes() {
        assert!(Image::<f64>::new(0, 3, 1, vec![]).is_err());
        assert!(Image::<f64>::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::<f64>::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn stack_requires_same_dims() {
        let a = Image::<f64>::filled(3, 3, 0.0);
        let b = Image::<f64>::filled(3, 4, 0.0);
        assert!(ImageStack::new(vec![a.clone(), b]).is_err());
        assert!(ImageStack::<f64>::new(vec![]).is_err());
        assert_eq!(ImageStack::new(vec![a]).unwrap().len(), 1);
    }

    #[test]
    fn compacted_labels_keep_order() {
        let m = LabelMap::from_vec(4, 1, vec![0, 7, 3, 7]).unwrap();
        assert_eq!(m.compacted().data(), &[0, 2, 1, 2]);
    }

    #[test]
    fn gray_png_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        write_png(
            &path,
            2,
            2,
            png::ColorType::Grayscale,
            png::BitDepth::Eight,
            &[0, 255, 128, 64],
        )
        .unwrap();
        let img: Image<f64> = load_image(&path).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn sixteen_bit_image_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        write_png(
            &path,
            1,
            1,
            png::ColorType::Grayscale,
            png::BitDepth::Sixteen,
            &[1, 2],
        )
        .unwrap();
        let err = load_image::<f64>(&path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedBitDepth(16)));
        assert!(err.to_string().contains("unsupported bit depth"));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_image::<f64>("/nonexistent/nope.png"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn labels_roundtrip_sixteen_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        let m = LabelMap::from_vec(3, 1, vec![0, 300, 65535]).unwrap();
        save_labels(&m, &path).unwrap();
        assert_eq!(load_labels(&path).unwrap(), m);
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = SegMask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        save_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);
    }
}
