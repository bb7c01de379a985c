//! Boundary tracing and contour smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::blobs::Blob;
use super::savgol::{savgol_coefficients, smooth_cyclic};

/// Closed polyline of boundary points in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(f64, f64)>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// Clockwise on screen (y grows downward), starting west.
const RING: [(isize, isize); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn ring_index(dx: isize, dy: isize) -> usize {
    RING.iter().position(|&d| d == (dx, dy)).expect("unit offset")
}

/// Moore-neighbor trace of the outer boundary, clockwise from the
/// topmost-leftmost pixel, with Jacob's stopping criterion.
///
/// Blobs whose trace has fewer than four points (single pixels, short
/// lines) yield the four pixel-edge corners of their bounding box instead.
pub fn trace_contour(blob: &Blob) -> Contour {
    let r = blob.bbox;
    // Local bitmap padded by one pixel so the walk never leaves it.
    let (w, h) = (r.width() + 2, r.height() + 2);
    let mut grid = vec![false; w * h];
    for &(x, y) in &blob.pixels {
        grid[(y - r.y0 + 1) * w + (x - r.x0 + 1)] = true;
    }
    let at = |x: isize, y: isize| grid[y as usize * w + x as usize];
    let start = blob
        .pixels
        .iter()
        .min_by_key(|&&(x, y)| (y, x))
        .map(|&(x, y)| ((x - r.x0 + 1) as isize, (y - r.y0 + 1) as isize))
        .expect("nonempty blob");

    let mut points = vec![start];
    let mut cur = start;
    // Entered the start pixel from the west (background by construction).
    let mut back = ring_index(-1, 0);
    let first_back = back;
    let limit = 4 * blob.area() + 8;
    loop {
        let mut found = None;
        for step in 1..=8 {
            let k = (back + step) % 8;
            let (dx, dy) = RING[k];
            if at(cur.0 + dx, cur.1 + dy) {
                found = Some(k);
                break;
            }
        }
        let Some(k) = found else { break };
        let (dx, dy) = RING[k];
        let prev = (cur.0 + RING[(k + 7) % 8].0, cur.1 + RING[(k + 7) % 8].1);
        let next = (cur.0 + dx, cur.1 + dy);
        // Backtrack direction is the last background cell examined,
        // expressed relative to the new pixel.
        back = ring_index(prev.0 - next.0, prev.1 - next.1);
        cur = next;
        if cur == start && back == first_back || points.len() > limit {
            break;
        }
        points.push(cur);
    }
    if points.len() < 4 {
        let (x0, y0) = (r.x0 as f64 - 0.5, r.y0 as f64 - 0.5);
        let (x1, y1) = (r.x1 as f64 - 0.5, r.y1 as f64 - 0.5);
        return Contour {
            points: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
        };
    }
    Contour {
        points: points
            .into_iter()
            .map(|(x, y)| ((x - 1) as f64 + r.x0 as f64, (y - 1) as f64 + r.y0 as f64))
            .collect(),
    }
}

/// Savitzky-Golay smoothing of the cyclic x(t) and y(t) sequences.
pub fn smooth_contour(c: &Contour, window: usize, order: usize) -> Result<Contour> {
    let kernel: Vec<f64> = savgol_coefficients(window, order)?;
    if c.len() < window {
        return Err(Error::invalid(format!(
            "contour of {} points is shorter than the smoothing window {window}",
            c.len()
        )));
    }
    let xs: Vec<f64> = c.points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = c.points.iter().map(|p| p.1).collect();
    let sx = smooth_cyclic(&xs, &kernel);
    let sy = smooth_cyclic(&ys, &kernel);
    Ok(Contour {
        points: sx.into_iter().zip(sy).collect(),
    })
}
