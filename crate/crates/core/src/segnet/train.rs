//! Seeded mini-batch training and thresholded prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::net::{backward, build_net, forward, Architecture, NetworkParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::{Image, SegMask};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Samples drawn per epoch (a fresh shuffled prefix each epoch);
    /// `None` uses the whole source.
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::default(),
            epochs: 100,
            adam: AdamConfig::default(),
            batch_size: 4,
            samples_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::invalid("samples per epoch must be at least 1"));
        }
        Ok(())
    }
}

/// Indexed training pairs, possibly generated on demand.
pub trait SampleSource<T> {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<(Image<T>, SegMask)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> SampleSource<T> for [(Image<T>, SegMask)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<(Image<T>, SegMask)> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::OutOfBounds(format!("sample {index}")))
    }
}

impl<T: Scalar> SampleSource<T> for Vec<(Image<T>, SegMask)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<(Image<T>, SegMask)> {
        self.as_slice().sample(index)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub params: NetworkParams<T>,
    /// Mean training loss of each epoch.
    pub losses: Vec<f64>,
}

impl<T> TrainOutput<T> {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        s
    }
}

fn input_image<T: Scalar>(img: &Image<T>, in_channels: usize) -> Image<T> {
    if in_channels == 1 && img.channels() != 1 {
        img.to_grayscale()
    } else {
        img.clone()
    }
}

pub fn train<T: Scalar>(source: &(impl SampleSource<T> + ?Sized), cfg: &TrainConfig) -> Result<TrainOutput<T>> {
    train_with(source, cfg, |_, _| {})
}

/// Train from a fresh seeded initialization. The shuffling stream and the
/// initialization are both derived from `cfg.seed`, so identical inputs
/// give identical parameters and loss curves. `on_epoch(epoch, loss)` is
/// called after every epoch.
pub fn train_with<T: Scalar>(
    source: &(impl SampleSource<T> + ?Sized),
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut params = build_net::<T>(cfg.arch, cfg.seed)?;
    let mut state = AdamState::new(params.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..source.len()).collect();
    let per_epoch = cfg.samples_per_epoch.unwrap_or(source.len()).min(source.len());
    let mut dims = None;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order[..per_epoch].chunks(cfg.batch_size) {
            let mut imgs = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, mask) = source.sample(i)?;
                let img = input_image(&img, cfg.arch.in_channels);
                if img.dims() != mask.dims() {
                    return Err(Error::Shape(format!("sample {i}: image and mask differ in size")));
                }
                match dims {
                    None => dims = Some(img.dims()),
                    Some(d) if d != img.dims() => {
                        return Err(Error::Shape(format!(
                            "sample {i} is {:?}, expected uniform {d:?}",
                            img.dims()
                        )))
                    }
                    _ => {}
                }
                imgs.push(img);
                masks.push(mask);
            }
            let x = Tensor::from_images(&imgs.iter().collect::<Vec<_>>())?;
            let (l, g) = backward(&params, &x, &masks.iter().collect::<Vec<_>>())?;
            adam_step(&mut params.values, &g, &mut state, &cfg.adam)?;
            total += l * chunk.len() as f64;
            seen += chunk.len();
        }
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameters diverged in epoch {}", epoch + 1)));
        }
        let mean = total / seen as f64;
        losses.push(mean);
        on_epoch(epoch + 1, mean);
    }
    Ok(TrainOutput { params, losses })
}

/// Mirror index without repeating the edge (`n, n+1, ...` map to
/// `n-2, n-3, ...`).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extend right and bottom by reflection so both dims are multiples of
/// `stride`.
pub fn pad_reflect<T: Scalar>(img: &Image<T>, stride: usize) -> Image<T> {
    let (w, h) = img.dims();
    let (pw, ph) = (w.div_ceil(stride) * stride, h.div_ceil(stride) * stride);
    if (pw, ph) == (w, h) {
        return img.clone();
    }
    let ch = img.channels();
    let mut data = Vec::with_capacity(pw * ph * ch);
    for y in 0..ph {
        for x in 0..pw {
            data.extend_from_slice(img.pixel(reflect(x, w), reflect(y, h)));
        }
    }
    Image::new(pw, ph, ch, data).expect("padded shape")
}

pub fn pad_reflect_mask(mask: &SegMask, stride: usize) -> SegMask {
    let (w, h) = mask.dims();
    let (pw, ph) = (w.div_ceil(stride) * stride, h.div_ceil(stride) * stride);
    SegMask::from_fn(pw, ph, |x, y| mask.get(reflect(x, w), reflect(y, h)))
}

/// Foreground probability per pixel at the input's own size.
pub fn probability_map<T: Scalar>(params: &NetworkParams<T>, img: &Image<T>) -> Result<Image<T>> {
    let img = input_image(img, params.arch.in_channels);
    let (w, h) = img.dims();
    let padded = pad_reflect(&img, params.arch.stride());
    let pw = padded.width();
    let y = forward(params, &Tensor::from_images(&[&padded])?)?;
    let plane = y.plane(0, 0);
    Ok(Image::from_fn(w, h, |x, yy| plane[yy * pw + x]))
}

/// Forward pass thresholded to a binary mask (`p > threshold`).
pub fn predict_mask<T: Scalar>(params: &NetworkParams<T>, img: &Image<T>, threshold: f64) -> Result<SegMask> {
    let prob = probability_map(params, img)?;
    let (w, h) = prob.dims();
    Ok(SegMask::from_fn(w, h, |x, y| prob.get(x, y).f64() > threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> Vec<(Image<f64>, SegMask)> {
        (0..4)
            .map(|k| {
                let cx = 4.0 + k as f64;
                let mask = SegMask::from_fn(16, 16, |x, y| {
                    (x as f64 - cx).powi(2) + (y as f64 - 8.0).powi(2) < 12.0
                });
                let img = Image::from_fn(16, 16, |x, y| if mask.get(x, y) { 0.2 } else { 0.8 });
                (img, mask)
            })
            .collect()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            arch: Architecture { depth: 2, base: 8, in_channels: 1 },
            epochs,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            batch_size: 2,
            samples_per_epoch: None,
            seed: 11,
        }
    }

    #[test]
    fn smoke_training_reduces_loss_and_is_deterministic() {
        let data = tiny_set();
        let a = train(&data, &cfg(15)).unwrap();
        assert!(a.losses.last().unwrap() < &a.losses[0]);
        let b = train(&data, &cfg(15)).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
        assert!(a.loss_csv().starts_with("epoch,loss\n1,"));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = tiny_set();
        let out = train(&data, &cfg(0)).unwrap();
        assert!(out.losses.is_empty());
        assert_eq!(out.params, build_net::<f64>(cfg(0).arch, 11).unwrap());
    }

    #[test]
    fn empty_and_ragged_sets_rejected() {
        let empty: Vec<(Image<f64>, SegMask)> = Vec::new();
        assert!(train(&empty, &cfg(1)).is_err());
        let mut data = tiny_set();
        data.push((Image::filled(8, 8, 0.5), SegMask::empty(8, 8)));
        assert!(train(&data, &cfg(2)).is_err());
    }

    #[test]
    fn negative_head_bias_predicts_nothing() {
        let mut p = build_net::<f64>(Architecture { depth: 2, base: 2, in_channels: 1 }, 4).unwrap();
        p.set_head_bias(-10.0);
        let img = Image::from_fn(13, 10, |x, y| ((x * y) % 7) as f64 / 7.0);
        let m = predict_mask(&p, &img, 0.5).unwrap();
        assert_eq!(m.dims(), (13, 10));
        assert!(m.is_empty());
    }

    #[test]
    fn reflect_padding() {
        let img = Image::from_vec_gray(3, 1, vec![0.1, 0.2, 0.3]);
        let p = pad_reflect(&img, 4);
        assert_eq!(p.dims(), (4, 4));
        assert_eq!(&p.data()[..4], &[0.1, 0.2, 0.3, 0.2]);
        assert_eq!(p.data()[4..8], p.data()[..4]);
        assert_eq!(reflect(7, 3), 1);
        assert_eq!(pad_reflect(&p, 4), p);
    }
}
