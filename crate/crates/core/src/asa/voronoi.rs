//! Nearest-seed tessellation and watershed regularisation.

use crate::error::{Error, Result};
use crate::raster::LabelMap;

/// Label each pixel with `1 + index` of its nearest seed (Euclidean);
/// exact ties go to the lowest index.
pub fn voronoi_partition(seeds: &[(f64, f64)], width: usize, height: usize) -> Result<LabelMap> {
    if seeds.is_empty() {
        return Err(Error::invalid("voronoi partition needs at least one seed"));
    }
    for &(x, y) in seeds {
        if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
            return Err(Error::OutOfBounds(format!("seed ({x}, {y}) outside the image")));
        }
    }
    Ok(LabelMap::from_fn(width, height, |px, py| {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &(sx, sy)) in seeds.iter().enumerate() {
            let d = (px as f64 - sx).powi(2) + (py as f64 - sy).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best as u32 + 1
    }))
}

/// Keep a watershed label only where the Voronoi cell agrees with it.
pub fn voronoi_clip(ws: &LabelMap, vor: &LabelMap) -> Result<LabelMap> {
    if ws.dims() != vor.dims() {
        return Err(Error::Shape("watershed and voronoi maps differ in size".into()));
    }
    if ws.max_label() > vor.max_label() {
        return Err(Error::invalid(format!(
            "watershed label {} has no voronoi seed (only {})",
            ws.max_label(),
            vor.max_label()
        )));
    }
    let data = ws
        .data()
        .iter()
        .zip(vor.data())
        .map(|(&a, &b)| if a == b { a } else { 0 })
        .collect();
    LabelMap::from_vec(ws.width(), ws.height(), data)
}
