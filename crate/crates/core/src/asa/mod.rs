//! Adaptive segmentation: intensity mixture thresholding, reconstruction
//! morphology, marker-controlled watershed, Voronoi regularisation,
//! size filtering and contour smoothing.

pub mod blobs;
pub mod contour;
pub mod distance;
pub mod gmm;
pub mod markers;
pub mod morphology;
pub mod reconstruct;
pub mod savgol;
pub mod voronoi;
pub mod watershed;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, LabelMap, SegMask};
use crate::scalar::Scalar;

pub use blobs::{blobs, connected_components, size_filter, Blob};
pub use contour::{smooth_contour, trace_contour, Contour};
pub use distance::distance_transform;
pub use gmm::{fit_gmm, gmm_threshold, GmmFit, GmmModel};
pub use markers::extract_markers;
pub use morphology::Morphology;
pub use reconstruct::{closing_by_reconstruction, opening_by_reconstruction};
pub use savgol::savgol_coefficients;
pub use voronoi::{voronoi_clip, voronoi_partition};
pub use watershed::{watershed, watershed_in};

/// Tunables of the segmentation pipeline. Serialized as a flat JSON object;
/// missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsaParams {
    pub min_cell_size: usize,
    pub max_cell_size: usize,
    pub gmm_threshold: f64,
    pub components: usize,
    pub se_radius: usize,
    pub smooth_window: usize,
    pub smooth_order: usize,
    /// Stain is darker than the background.
    pub dark_foreground: bool,
    pub em_max_iters: usize,
    pub em_tol: f64,
}

impl Default for AsaParams {
    fn default() -> Self {
        AsaParams {
            min_cell_size: 30,
            max_cell_size: 5000,
            gmm_threshold: 0.5,
            components: 2,
            se_radius: 2,
            smooth_window: 7,
            smooth_order: 2,
            dark_foreground: true,
            em_max_iters: 200,
            em_tol: 1e-6,
        }
    }
}

impl AsaParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_cell_size == 0 || self.min_cell_size >= self.max_cell_size {
            return Err(Error::invalid("need 0 < min_cell_size < max_cell_size"));
        }
        if !(self.gmm_threshold > 0.0 && self.gmm_threshold < 1.0) {
            return Err(Error::invalid("gmm_threshold must lie in (0, 1)"));
        }
        if self.components == 0 || self.se_radius == 0 {
            return Err(Error::invalid("components and se_radius must be positive"));
        }
        if self.smooth_window % 2 == 0 || self.smooth_window <= self.smooth_order {
            return Err(Error::invalid("smooth_window must be odd and exceed smooth_order"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsaOutput {
    pub mask: SegMask,
    pub labels: LabelMap,
    pub contours: Vec<Contour>,
}

/// Split a binary mask into cells: watershed on the negated distance
/// transform from its h-suppressed distance maxima, confined to the mask.
pub fn separate_touching(mask: &SegMask, min_cell_size: usize) -> LabelMap {
    let (fg, _) = extract_markers(mask, min_cell_size);
    if fg.max_label() == 0 {
        return LabelMap::empty(mask.width(), mask.height());
    }
    let dt: Image<f64> = distance_transform(mask);
    let prio = dt.map(|v| -v);
    watershed_in(&prio, &fg, Some(mask)).expect("markers lie inside the mask")
}

/// Post-processing chain applied to predicted masks before counting.
pub fn postprocess(mask: &SegMask, min_cell_size: usize, max_cell_size: usize) -> LabelMap {
    size_filter(&separate_touching(mask, min_cell_size), min_cell_size, max_cell_size)
}

/// Run the full segmentation on an EDF image. Deterministic given `seed`.
pub fn run_asa<T: Scalar>(edf: &Image<T>, params: &AsaParams, seed: u64) -> Result<AsaOutput> {
    params.validate()?;
    let gray = edf.to_grayscale();
    let (w, h) = gray.dims();
    let empty = || AsaOutput {
        mask: SegMask::empty(w, h),
        labels: LabelMap::empty(w, h),
        contours: Vec::new(),
    };
    let (lo, hi) = gray.min_max();
    if hi - lo <= T::epsilon() {
        return Ok(empty());
    }
    let fit = fit_gmm(
        gray.data(),
        params.components,
        params.em_max_iters,
        params.em_tol,
        seed,
    )?;
    let raw = gmm_threshold(&fit.model, &gray, params.gmm_threshold, params.dark_foreground)?;
    let cleaned = raw.open(params.se_radius).close(params.se_radius);

    let processed = closing_by_reconstruction(
        &opening_by_reconstruction(&gray, params.se_radius)?,
        params.se_radius,
    )?;

    let (fg, bg) = extract_markers(&cleaned, params.min_cell_size);
    let n_cells = fg.max_label();
    if n_cells == 0 {
        return Ok(empty());
    }
    let mut seeds_map = fg.clone();
    for y in 0..h {
        for x in 0..w {
            if bg.get(x, y) && seeds_map.get(x, y) == 0 {
                seeds_map.set(x, y, n_cells + 1);
            }
        }
    }
    let ws = watershed(&morphology::gradient(&processed), &seeds_map)?;
    let mut cells = ws;
    for v in cells.data_mut() {
        if *v > n_cells {
            *v = 0;
        }
    }
    let seeds: Vec<(f64, f64)> = blobs(&fg).iter().map(|b| b.centroid).collect();
    let vor = voronoi_partition(&seeds, w, h)?;
    let clipped = voronoi_clip(&cells, &vor)?;
    let labels = size_filter(&clipped, params.min_cell_size, params.max_cell_size);

    let contours = blobs(&labels)
        .iter()
        .map(|b| {
            let c = trace_contour(b);
            if c.len() >= params.smooth_window {
                smooth_contour(&c, params.smooth_window, params.smooth_order)
            } else {
                Ok(c)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AsaOutput {
        mask: labels.foreground(),
        labels,
        contours,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disks(w: usize, h: usize, centers: &[(f64, f64)], r: f64) -> Image<f64> {
        Image::from_fn(w, h, |x, y| {
            let inside = centers
                .iter()
                .any(|&(cx, cy)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r);
            if inside {
                0.25
            } else {
                0.8
            }
        })
    }

    #[test]
    fn blank_image_gives_empty_mask() {
        let out = run_asa(&Image::<f64>::filled(32, 32, 0.7), &AsaParams::default(), 1).unwrap();
        assert!(out.mask.is_empty());
        assert_eq!(out.labels.region_count(), 0);
    }

    #[test]
    fn five_disks_found() {
        let centers = [(12.0, 12.0), (40.0, 14.0), (25.0, 35.0), (50.0, 50.0), (12.0, 52.0)];
        let img = disks(64, 64, &centers, 5.0);
        let out = run_asa(&img, &AsaParams::default(), 7).unwrap();
        let found = blobs(&out.labels);
        assert_eq!(found.len(), 5);
        for &(cx, cy) in &centers {
            assert!(found
                .iter()
                .any(|b| (b.centroid.0 - cx).abs() <= 1.0 && (b.centroid.1 - cy).abs() <= 1.0));
        }
        assert_eq!(out.contours.len(), 5);
        let again = run_asa(&img, &AsaParams::default(), 7).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn separate_touching_cases() {
        assert_eq!(separate_touching(&SegMask::empty(10, 10), 30).region_count(), 0);
        let one = SegMask::from_fn(30, 30, |x, y| {
            (x as f64 - 15.0).powi(2) + (y as f64 - 15.0).powi(2) <= 36.0
        });
        assert_eq!(separate_touching(&one, 30).region_count(), 1);
        let two = SegMask::from_fn(40, 20, |x, y| {
            let d = |cx: f64| (x as f64 - cx).powi(2) + (y as f64 - 10.0).powi(2) <= 36.0;
            d(15.0) || d(25.0)
        });
        let sep = separate_touching(&two, 30);
        assert_eq!(sep.region_count(), 2);
        assert_eq!(sep.foreground(), two);
    }

    #[test]
    fn params_validation() {
        let p = AsaParams {
            min_cell_size: 50,
            max_cell_size: 40,
            ..AsaParams::default()
        };
        assert!(p.validate().is_err());
        let p: AsaParams = serde_json::from_str(r#"{"min_cell_size": 12}"#).unwrap();
        assert_eq!(p.min_cell_size, 12);
        assert_eq!(p.max_cell_size, 5000);
    }
}
