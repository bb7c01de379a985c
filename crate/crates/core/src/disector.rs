//! Unbiased counting frame: inclusion/exclusion classification of cells,
//! annotation matching and count error metrics.
//!
//! The top and right edges of the frame are inclusion lines, the bottom and
//! left edges exclusion lines. Edge lines are the outermost `thickness`
//! rows/columns of the frame rectangle. Corners shared by an inclusion and
//! an exclusion line belong to the exclusion line, so the two edge sets are
//! disjoint and together cover the frame border. A cell "touches" a line
//! when one of its pixels is on, or 8-adjacent to, a line pixel.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asa::blobs::{blobs, Blob};
use crate::error::{Error, Result};
use crate::raster::{LabelMap, Rect};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisectorFrame {
    #[serde(flatten)]
    pub rect: Rect,
    #[serde(default = "one")]
    pub thickness: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Inclusion,
    Exclusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountVerdict {
    Counted,
    Excluded,
    Outside,
}

impl DisectorFrame {
    pub fn new(rect: Rect) -> Self {
        DisectorFrame { rect, thickness: 1 }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !self.rect.is_valid_in(width, height) {
            return Err(Error::OutOfBounds(format!(
                "frame {:?} outside {width}x{height} image",
                self.rect
            )));
        }
        if self.thickness == 0 {
            return Err(Error::invalid("frame line thickness must be positive"));
        }
        Ok(())
    }

    /// Which edge line, if any, the pixel lies on.
    pub fn edge_at(&self, x: isize, y: isize) -> Option<EdgeKind> {
        let r = &self.rect;
        let t = self.thickness as isize;
        let (x0, y0, x1, y1) = (r.x0 as isize, r.y0 as isize, r.x1 as isize, r.y1 as isize);
        if x < x0 || y < y0 || x >= x1 || y >= y1 {
            return None;
        }
        if x < x0 + t || y >= y1 - t {
            Some(EdgeKind::Exclusion)
        } else if y < y0 + t || x >= x1 - t {
            Some(EdgeKind::Inclusion)
        } else {
            None
        }
    }

    /// Inside the frame and not on any edge line.
    pub fn is_interior(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && self.rect.contains(x as usize, y as usize)
            && self.edge_at(x, y).is_none()
    }

    fn touches(&self, x: usize, y: usize, kind: EdgeKind) -> bool {
        (-1..=1).any(|dy| {
            (-1..=1).any(|dx| self.edge_at(x as isize + dx, y as isize + dy) == Some(kind))
        })
    }

    /// Shift the frame by a signed offset; used when cropping.
    pub fn translated(&self, dx: isize, dy: isize) -> Option<DisectorFrame> {
        let m = |v: usize, d: isize| usize::try_from(v as isize + d).ok();
        Some(DisectorFrame {
            rect: Rect::new(
                m(self.rect.x0, dx)?,
                m(self.rect.y0, dy)?,
                m(self.rect.x1, dx)?,
                m(self.rect.y1, dy)?,
            ),
            thickness: self.thickness,
        })
    }
}

/// Exclusion takes precedence over inclusion.
pub fn classify_blob(blob: &Blob, frame: &DisectorFrame) -> CountVerdict {
    if blob
        .pixels
        .iter()
        .any(|&(x, y)| frame.touches(x, y, EdgeKind::Exclusion))
    {
        return CountVerdict::Excluded;
    }
    if blob.pixels.iter().any(|&(x, y)| {
        frame.is_interior(x as isize, y as isize) || frame.touches(x, y, EdgeKind::Inclusion)
    }) {
        CountVerdict::Counted
    } else {
        CountVerdict::Outside
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountResult {
    pub counted: usize,
    /// `(label, verdict)` for every region, ascending by label.
    pub verdicts: Vec<(u32, CountVerdict)>,
}

pub fn count_cells(labels: &LabelMap, frame: &DisectorFrame) -> CountResult {
    let verdicts: Vec<(u32, CountVerdict)> = blobs(labels)
        .iter()
        .map(|b| (b.label, classify_blob(b, frame)))
        .collect();
    CountResult {
        counted: verdicts
            .iter()
            .filter(|(_, v)| *v == CountVerdict::Counted)
            .count(),
        verdicts,
    }
}

/// Manual counting marks for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub frame: DisectorFrame,
    pub dots: Vec<[f64; 2]>,
}

impl Annotation {
    pub fn load(path: impl AsRef<Path>) -> Result<Annotation> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        self.frame.validate(width, height)?;
        for (i, d) in self.dots.iter().enumerate() {
            if !(d[0] >= -0.5 && d[1] >= -0.5 && d[0] < width as f64 - 0.5 && d[1] < height as f64 - 0.5) {
                return Err(Error::OutOfBounds(format!("dot {i} at {:?} outside image", d)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `(label, dot index)` pairs.
    pub matched: Vec<(u32, usize)>,
    pub unmatched_blobs: Vec<u32>,
    pub unmatched_dots: Vec<usize>,
    pub accept: bool,
}

/// Compare counted cells with manual dots. Cells touching the exclusion
/// line (and cells outside the frame) are ignored. Accept iff every
/// counted cell holds exactly one dot and every dot lies in a counted cell.
pub fn match_annotation(labels: &LabelMap, ann: &Annotation) -> MatchReport {
    let (w, h) = labels.dims();
    let counted: Vec<u32> = count_cells(labels, &ann.frame)
        .verdicts
        .into_iter()
        .filter(|(_, v)| *v == CountVerdict::Counted)
        .map(|(l, _)| l)
        .collect();
    let mut hits: Vec<Vec<usize>> = vec![Vec::new(); counted.len()];
    let mut unmatched_dots = Vec::new();
    for (i, d) in ann.dots.iter().enumerate() {
        let (x, y) = (d[0].round(), d[1].round());
        let label = if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
            labels.get(x as usize, y as usize)
        } else {
            0
        };
        match counted.binary_search(&label) {
            Ok(k) if label != 0 => hits[k].push(i),
            _ => unmatched_dots.push(i),
        }
    }
    let mut matched = Vec::new();
    let mut unmatched_blobs = Vec::new();
    for (k, dots) in hits.iter().enumerate() {
        match dots.as_slice() {
            [] => unmatched_blobs.push(counted[k]),
            [d] => matched.push((counted[k], *d)),
            [d, rest @ ..] => {
                // Merged cells: one pairing, the blob and the extra dots fail.
                matched.push((counted[k], *d));
                unmatched_blobs.push(counted[k]);
                unmatched_dots.extend_from_slice(rest);
            }
        }
    }
    unmatched_dots.sort_unstable();
    let accept = unmatched_blobs.is_empty() && unmatched_dots.is_empty();
    MatchReport {
        matched,
        unmatched_blobs,
        unmatched_dots,
        accept,
    }
}

/// `|y_true - y_pred| / y_true * 100`.
pub fn error_rate(y_true: u64, y_pred: u64) -> Result<f64> {
    if y_true == 0 {
        return Err(Error::UndefinedMetric(
            "error rate is undefined when the true count is zero".into(),
        ));
    }
    Ok(y_true.abs_diff(y_pred) as f64 / y_true as f64 * 100.0)
}

/// Error rate of the summed counts (not the mean of per-pair rates).
pub fn aggregate_error_rate(pairs: &[(u64, u64)]) -> Result<f64> {
    let t: u64 = pairs.iter().map(|p| p.0).sum();
    let p: u64 = pairs.iter().map(|p| p.1).sum();
    error_rate(t, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionCount {
    pub section: String,
    pub manual: u64,
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub sections: Vec<SectionCount>,
    pub total_manual: u64,
    pub total_predicted: u64,
    pub aggregate_error_pct: f64,
}

impl CountReport {
    pub fn new(sections: Vec<SectionCount>) -> Result<CountReport> {
        let pairs: Vec<(u64, u64)> = sections.iter().map(|s| (s.manual, s.predicted)).collect();
        Ok(CountReport {
            aggregate_error_pct: aggregate_error_rate(&pairs)?,
            total_manual: pairs.iter().map(|p| p.0).sum(),
            total_predicted: pairs.iter().map(|p| p.1).sum(),
            sections,
        })
    }

    /// `section,manual,predicted,error_pct`; sections with a zero manual
    /// count leave the error column empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,manual,predicted,error_pct\n");
        for s in &self.sections {
            let err = error_rate(s.manual, s.predicted)
                .map(|e| format!("{e:.4}"))
                .unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", s.section, s.manual, s.predicted, err);
        }
        let _ = writeln!(
            out,
            "total,{},{},{:.4}",
            self.total_manual, self.total_predicted, self.aggregate_error_pct
        );
        out
    }

    /// Parse `section,manual,predicted[,error_pct]` rows; a `total` row is
    /// ignored.
    pub fn from_csv(text: &str) -> Result<CountReport> {
        let mut sections = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("section")) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 3 {
                return Err(Error::invalid(format!("line {}: expected 3 columns", n + 1)));
            }
            if cols[0] == "total" {
                continue;
            }
            let parse = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::invalid(format!("line {}: bad count {s:?}", n + 1)))
            };
            sections.push(SectionCount {
                section: cols[0].to_string(),
                manual: parse(cols[1])?,
                predicted: parse(cols[2])?,
            });
        }
        CountReport::new(sections)
    }
}
