//! Even-odd polygon rasterization at pixel centers.

use serde::{Deserialize, Serialize};

/// A point in continuous pixel coordinates. Pixel `(i, j)` covers
/// `[i, i+1) × [j, j+1)` and has its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub row: f64,
    pub col: f64,
}

impl Point2 {
    pub const fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }
}

/// Boolean `height × width` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Coordinates of set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(p, _)| (p / self.width, p % self.width))
    }
}

/// Signed shoelace area.
pub fn polygon_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for k in 0..n {
        let a = vertices[k];
        let b = vertices[(k + 1) % n];
        twice += a.col * b.row - b.col * a.row;
    }
    0.5 * twice
}

/// Rasterizes a simple polygon onto a `grid = (height, width)` mask.
///
/// A pixel is set iff its center passes the even-odd test. Crossings are
/// counted half-open (`y0 > y` vs `y1 > y`, strict `x < x_cross`), so two
/// polygons sharing an edge never both claim a pixel. Degenerate (zero-area)
/// input gives an empty mask.
pub fn rasterize_polygon(vertices: &[Point2], grid: (usize, usize)) -> Mask {
    let (height, width) = grid;
    let mut mask = Mask::empty(height, width);
    if vertices.len() < 3 || polygon_area(vertices).abs() < 1e-12 {
        return mask;
    }
    let n = vertices.len();
    let (min_r, max_r) = vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.row), hi.max(p.row)));
    let first = (min_r - 0.5).ceil().max(0.0) as usize;
    let last = ((max_r - 0.5).floor().min(height as f64 - 1.0)).max(-1.0);
    if last < 0.0 {
        return mask;
    }
    let last = last as usize;

    let mut xs = Vec::with_capacity(n);
    for i in first..=last.min(height.saturating_sub(1)) {
        let y = i as f64 + 0.5;
        xs.clear();
        for k in 0..n {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            if (a.row > y) != (b.row > y) {
                xs.push(a.col + (y - a.row) * (b.col - a.col) / (b.row - a.row));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // centers x with pair[0] <= x < pair[1]
            let lo = (pair[0] - 0.5).ceil().max(0.0);
            let hi = (pair[1] - 0.5).ceil().min(width as f64);
            if hi <= lo {
                continue;
            }
            for j in lo as usize..hi as usize {
                mask.set(i, j, true);
            }
        }
    }
    mask
}

/// Direct per-pixel even-odd test; used as an independent reference.
pub fn point_in_polygon(vertices: &[Point2], p: Point2) -> bool {
    let n = vertices.len();
    let mut inside = false;
    for k in 0..n {
        let a = vertices[k];
        let b = vertices[(k + 1) % n];
        if (a.row > p.row) != (b.row > p.row) {
            let x = a.col + (p.row - a.row) * (b.col - a.col) / (b.row - a.row);
            if p.col < x {
                inside = !inside;
            }
        }
    }
    inside
}
