//! Marker-controlled watershed by priority flooding.
//!
//! Seeds are the nonzero marker pixels. Their unlabeled neighbors enter a
//! min-queue keyed by `(priority, insertion order)` carrying the label of
//! the pixel that pushed them; a pixel takes the label of its first push.
//! Marker pixels are scanned in raster order and neighbors in a fixed
//! 8-neighbor order, so ties resolve deterministically (FIFO).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::raster::{Image, LabelMap, SegMask};
use crate::scalar::Scalar;

use super::blobs::NEIGHBORS8;

#[derive(Debug, Clone, Copy)]
struct Entry {
    priority: f64,
    seq: u64,
    index: usize,
    label: u32,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed so the std max-heap pops the smallest key first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Flood the whole image from `markers`.
pub fn watershed<T: Scalar>(priority: &Image<T>, markers: &LabelMap) -> Result<LabelMap> {
    watershed_in(priority, markers, None)
}

/// Flood from `markers`, never entering pixels outside `domain`; those
/// stay 0.
pub fn watershed_in<T: Scalar>(
    priority: &Image<T>,
    markers: &LabelMap,
    domain: Option<&SegMask>,
) -> Result<LabelMap> {
    let (w, h) = priority.dims();
    if markers.dims() != (w, h) || domain.is_some_and(|d| d.dims() != (w, h)) {
        return Err(Error::Shape("watershed inputs differ in size".into()));
    }
    if markers.max_label() == 0 {
        return Err(Error::invalid("watershed needs at least one marker"));
    }
    if priority.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("watershed priorities must be finite"));
    }
    let inside = |i: usize| domain.map_or(true, |d| d.data()[i] != 0);
    let mut labels = markers.clone();
    let mut queued = vec![false; w * h];
    for (i, q) in queued.iter_mut().enumerate() {
        *q = labels.data()[i] != 0;
    }
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push_neighbors =
        |i: usize, label: u32, queued: &mut [bool], heap: &mut BinaryHeap<Entry>| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if queued[n] || !inside(n) {
                    continue;
                }
                queued[n] = true;
                heap.push(Entry {
                    priority: priority.data()[n].f64(),
                    seq,
                    index: n,
                    label,
                });
                seq += 1;
            }
        };
    for i in 0..w * h {
        let l = labels.data()[i];
        if l != 0 {
            push_neighbors(i, l, &mut queued, &mut heap);
        }
    }
    while let Some(e) = heap.pop() {
        labels.data_mut()[e.index] = e.label;
        push_neighbors(e.index, e.label, &mut queued, &mut heap);
    }
    Ok(labels)
}
