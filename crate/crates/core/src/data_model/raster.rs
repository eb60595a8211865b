use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// Number of chords in a complete tracing: the principal axis plus twenty crossings.
pub const COMPLETE_CHORDS: usize = 21;

/// A line segment in continuous pixel coordinates.
///
/// Pixel `(row, col)` covers `[col, col + 1) × [row, row + 1)`, so its center
/// sits at `(col + 0.5, row + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chord {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Chord {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

/// Segment-based annotation of one frame: `chords[0]` is the principal axis,
/// the remaining chords cross it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonalTracing {
    pub frame_index: usize,
    pub chords: Vec<Chord>,
}

impl PolygonalTracing {
    pub fn is_complete(&self) -> bool {
        self.chords.len() == COMPLETE_CHORDS
    }

    /// Closed contour: axis start, one side ordered along the axis, axis end,
    /// then the other side in reverse.
    pub fn contour(&self) -> Vec<(f64, f64)> {
        let axis = self.chords[0];
        let (ax, ay) = (axis.x1, axis.y1);
        let (dx, dy) = (axis.x2 - axis.x1, axis.y2 - axis.y1);
        let cross = |x: f64, y: f64| dx * (y - ay) - dy * (x - ax);
        let along = |x: f64, y: f64| dx * (x - ax) + dy * (y - ay);

        let mut left = Vec::new();
        let mut right = Vec::new();
        for c in &self.chords[1..] {
            let (p, q) = ((c.x1, c.y1), (c.x2, c.y2));
            let (a, b) = if cross(p.0, p.1) >= cross(q.0, q.1) {
                (p, q)
            } else {
                (q, p)
            };
            left.push(a);
            right.push(b);
        }
        left.sort_by(|p, q| along(p.0, p.1).total_cmp(&along(q.0, q.1)));
        right.sort_by(|p, q| along(q.0, q.1).total_cmp(&along(p.0, p.1)));

        let mut contour = Vec::with_capacity(2 + left.len() + right.len());
        contour.push((axis.x1, axis.y1));
        contour.extend(left);
        contour.push((axis.x2, axis.y2));
        contour.extend(right);
        contour
    }
}

/// Fills the polygon outlined by a tracing.
///
/// Even-odd scanline fill sampled at pixel centers. A polygon with zero area
/// falls back to drawing its outline so a degenerate tracing still yields the
/// pixels it touches.
pub fn rasterize_tracing(
    tracing: &PolygonalTracing,
    height: usize,
    width: usize,
) -> Result<BinaryMask> {
    if tracing.chords.len() < 2 {
        return Err(Error::DegenerateTracing(format!(
            "frame {} has {} chord(s), need at least 2",
            tracing.frame_index,
            tracing.chords.len()
        )));
    }
    let (w, h) = (width as f64, height as f64);
    for (i, c) in tracing.chords.iter().enumerate() {
        let ok = [c.x1, c.x2]
            .iter()
            .all(|x| x.is_finite() && (0.0..=w).contains(x))
            && [c.y1, c.y2]
                .iter()
                .all(|y| y.is_finite() && (0.0..=h).contains(y));
        if !ok {
            return Err(Error::InvalidTracing(format!(
                "chord {i} of frame {} leaves the {height}x{width} frame",
                tracing.frame_index
            )));
        }
    }

    let contour = tracing.contour();
    if shoelace_area(&contour).abs() < 1e-9 {
        return Ok(draw_outline(&contour, height, width));
    }
    Ok(scanline_fill(&contour, height, width))
}

pub(crate) fn shoelace_area(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn scanline_fill(points: &[(f64, f64)], height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(height, width);
    let n = points.len();
    let mut xs = Vec::with_capacity(n);
    for row in 0..height {
        let y = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            // half-open in y so shared vertices are counted once
            if (y0 <= y && y < y1) || (y1 <= y && y < y0) {
                xs.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let first = (lo - 0.5).ceil().max(0.0) as usize;
            for col in first..width {
                if col as f64 + 0.5 >= hi {
                    break;
                }
                mask.set(row, col, true);
            }
        }
    }
    mask
}

fn draw_outline(points: &[(f64, f64)], height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(height, width);
    let n = points.len();
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        let steps = (((x1 - x0).abs().max((y1 - y0).abs())) * 4.0)
            .ceil()
            .max(1.0) as usize;
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            let x = x0 + f * (x1 - x0);
            let y = y0 + f * (y1 - y0);
            let col = (x.floor() as usize).min(width - 1);
            let row = (y.floor() as usize).min(height - 1);
            mask.set(row, col, true);
        }
    }
    mask
}
