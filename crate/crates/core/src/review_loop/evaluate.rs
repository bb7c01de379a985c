//! Training data assembly, frame-cropped prediction and test-set scoring.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::asa::postprocess;
use crate::augment::{augment_variant, crop_to_frame, frame_crop_rect, variants_per_pair};
use crate::disector::{aggregate_error_rate, count_cells, Annotation, DisectorFrame, SectionCount};
use crate::error::{Error, Result};
use crate::raster::{Image, SegMask};
use crate::scalar::Scalar;
use crate::segnet::{pad_reflect, pad_reflect_mask, predict_mask, NetworkParams, SampleSource};

/// Stable 64-bit value derived from an image id, used to give every
/// training pair its own augmentation seed.
pub fn id_seed(seed: u64, image_id: &str) -> u64 {
    let d = Sha256::digest(image_id.as_bytes());
    seed ^ u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Accepted (image, mask) pairs expanded on demand into every augmented
/// variant, each cropped to its frame plus `margin` and reflect-padded to
/// a multiple of `stride`. Index `i` is variant `i % 72` of pair `i / 72`.
pub struct AugmentedPairs<T> {
    pairs: Vec<(Image<T>, SegMask, DisectorFrame, u64)>,
    margin: usize,
    stride: usize,
}

impl<T: Scalar> AugmentedPairs<T> {
    pub fn new(margin: usize, stride: usize) -> Self {
        AugmentedPairs {
            pairs: Vec::new(),
            margin,
            stride,
        }
    }

    pub fn push(&mut self, img: Image<T>, mask: SegMask, frame: DisectorFrame, seed: u64) -> Result<()> {
        if img.dims() != mask.dims() {
            return Err(Error::Shape("training image and mask differ in size".into()));
        }
        frame.validate(img.width(), img.height())?;
        self.pairs.push((img, mask, frame, seed));
        Ok(())
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

impl<T: Scalar> SampleSource<T> for AugmentedPairs<T> {
    fn len(&self) -> usize {
        self.pairs.len() * variants_per_pair()
    }

    fn sample(&self, index: usize) -> Result<(Image<T>, SegMask)> {
        let v = variants_per_pair();
        let (img, mask, frame, seed) = self
            .pairs
            .get(index / v)
            .ok_or_else(|| Error::OutOfBounds(format!("sample {index}")))?;
        let (ai, am, _) = augment_variant(img, mask, *seed, index % v)?;
        let (ci, _) = crop_to_frame(&ai, frame, self.margin)?;
        let (cm, _) = crop_to_frame(&am, frame, self.margin)?;
        Ok((pad_reflect(&ci, self.stride), pad_reflect_mask(&cm, self.stride)))
    }
}

/// Predict on the frame crop (plus margin) and paste the result into an
/// otherwise empty full-size mask.
pub fn predict_in_frame<T: Scalar>(
    params: &NetworkParams<T>,
    img: &Image<T>,
    frame: &DisectorFrame,
    margin: usize,
    threshold: f64,
) -> Result<SegMask> {
    let (w, h) = img.dims();
    frame.validate(w, h)?;
    let (rect, _) = frame_crop_rect(frame, w, h, margin);
    let crop = img.crop(&rect)?;
    let pred = predict_mask(params, &crop, threshold)?;
    let mut full = SegMask::empty(w, h);
    for y in 0..rect.height() {
        for x in 0..rect.width() {
            if pred.get(x, y) {
                full.set(rect.x0 + x, rect.y0 + y, true);
            }
        }
    }
    Ok(full)
}

/// Cells counted in a predicted mask after small-object removal and
/// separation of touching cells.
pub fn count_prediction(mask: &SegMask, frame: &DisectorFrame, min_cell_size: usize, max_cell_size: usize) -> usize {
    count_cells(&postprocess(mask, min_cell_size, max_cell_size), frame).counted
}

pub struct TestItem<T> {
    pub image_id: String,
    pub section: u32,
    pub edf: Image<T>,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub margin: usize,
    pub threshold: f64,
    pub min_cell_size: usize,
    pub max_cell_size: usize,
}

/// Per-section manual (dot) and predicted (post-processed, disector-counted)
/// totals, plus the aggregate error rate over sections.
pub fn evaluate_test<T: Scalar>(
    params: &NetworkParams<T>,
    items: &[TestItem<T>],
    p: &EvalParams,
) -> Result<(Vec<SectionCount>, f64)> {
    let mut per: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for it in items {
        let mask = predict_in_frame(params, &it.edf, &it.annotation.frame, p.margin, p.threshold)?;
        let predicted = count_prediction(&mask, &it.annotation.frame, p.min_cell_size, p.max_cell_size);
        let e = per.entry(it.section).or_default();
        e.0 += it.annotation.dots.len() as u64;
        e.1 += predicted as u64;
    }
    section_report(per)
}

pub fn section_report(per: BTreeMap<u32, (u64, u64)>) -> Result<(Vec<SectionCount>, f64)> {
    let sections: Vec<SectionCount> = per
        .into_iter()
        .map(|(s, (manual, predicted))| SectionCount {
            section: s.to_string(),
            manual,
            predicted,
        })
        .collect();
    let pairs: Vec<(u64, u64)> = sections.iter().map(|s| (s.manual, s.predicted)).collect();
    let err = aggregate_error_rate(&pairs)?;
    Ok((sections, err))
}
