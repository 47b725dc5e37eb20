//! Pseudo-anomaly synthesis: crop a polygonal prism from a clean cube, rotate
//! it, and paste it back at another position over the same band interval.

mod dataset;
mod raster;

pub use dataset::{emit_dataset, DatasetManifest, ManifestFile, ManifestPair, Split, TILE_SIZE};
pub use raster::{point_in_polygon, polygon_area, rasterize_polygon, Mask, Point2};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::hsi::HsiCube;

pub const MAX_SAMPLE_ATTEMPTS: usize = 1000;
pub const MAX_AREA_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub vertex_range: (usize, usize),
    pub area_fraction_range: (f64, f64),
    pub band_count_range: (usize, usize),
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            vertex_range: (3, 8),
            area_fraction_range: (0.005, MAX_AREA_FRACTION),
            band_count_range: (1, 48),
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Default configuration with the band range spanning `1..=bands`.
    pub fn for_bands(bands: usize, seed: u64) -> Self {
        Self { band_count_range: (1, bands), seed, ..Self::default() }
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        let (vmin, vmax) = self.vertex_range;
        let (fmin, fmax) = self.area_fraction_range;
        let (bmin, bmax) = self.band_count_range;
        if !(3 <= vmin && vmin <= vmax) {
            return Err(SapError::InvalidArgument(format!("vertex range [{vmin}, {vmax}]")));
        }
        if !(0.0 < fmin && fmin <= fmax && fmax <= MAX_AREA_FRACTION) {
            return Err(SapError::InvalidArgument(format!("area fraction range [{fmin}, {fmax}]")));
        }
        if !(1 <= bmin && bmin <= bmax && bmax <= bands) {
            return Err(SapError::InvalidArgument(format!(
                "band count range [{bmin}, {bmax}] for {bands} bands"
            )));
        }
        Ok(())
    }
}

/// A polygonal prism: footprint polygon in the source frame, the band interval
/// it spans, and the rigid motion taking it to its paste location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonPrism {
    pub vertices: Vec<Point2>,
    pub band_start: usize,
    pub band_count: usize,
    pub rotation_deg: f64,
    pub src_anchor: Point2,
    pub dst_anchor: Point2,
}

fn rotation(deg: f64) -> (f64, f64) {
    // exact values on the quarter turns keep integer grids integral
    let quarter = deg / 90.0;
    if quarter.fract() == 0.0 {
        return match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
    }
    deg.to_radians().sin_cos()
}

fn rotate(p: Point2, sin: f64, cos: f64) -> Point2 {
    Point2::new(p.row * cos - p.col * sin, p.row * sin + p.col * cos)
}

impl PolygonPrism {
    /// Source-frame polygon moved to its paste position.
    pub fn destination_vertices(&self) -> Vec<Point2> {
        let (sin, cos) = rotation(self.rotation_deg);
        self.vertices
            .iter()
            .map(|v| {
                let r = rotate(
                    Point2::new(v.row - self.src_anchor.row, v.col - self.src_anchor.col),
                    sin,
                    cos,
                );
                Point2::new(r.row + self.dst_anchor.row, r.col + self.dst_anchor.col)
            })
            .collect()
    }

    pub fn source_footprint(&self, grid: (usize, usize)) -> Mask {
        rasterize_polygon(&self.vertices, grid)
    }

    /// Pixels overwritten when the prism is pasted.
    pub fn footprint(&self, grid: (usize, usize)) -> Mask {
        rasterize_polygon(&self.destination_vertices(), grid)
    }

    pub fn bands(&self) -> std::ops::Range<usize> {
        self.band_start..self.band_start + self.band_count
    }

    /// Checks the invariants that do not depend on a sampling config.
    pub fn validate(&self, dims: (usize, usize, usize)) -> Result<()> {
        let (b, m, n) = dims;
        if self.vertices.len() < 3 {
            return Err(SapError::InvalidArgument("prism needs at least 3 vertices".into()));
        }
        if self.band_count == 0 || self.band_start + self.band_count > b {
            return Err(SapError::InvalidArgument(format!(
                "band interval [{}, {}) outside {b} bands",
                self.band_start,
                self.band_start + self.band_count
            )));
        }
        let inside = |p: &Point2| p.row >= 0.0 && p.col >= 0.0 && p.row <= m as f64 && p.col <= n as f64;
        if !self.vertices.iter().all(inside) {
            return Err(SapError::Shape("source polygon exceeds image bounds".into()));
        }
        if !self.destination_vertices().iter().all(inside) {
            return Err(SapError::Shape("rotated footprint exceeds image bounds".into()));
        }
        Ok(())
    }
}

fn bbox(points: &[Point2]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(r0, r1, c0, c1), p| (r0.min(p.row), r1.max(p.row), c0.min(p.col), c1.max(p.col)),
    )
}

/// Uniform offset placing an extent `[lo, hi]` inside `[0, size]`.
fn place(rng: &mut ChaCha8Rng, lo: f64, hi: f64, size: f64) -> Option<f64> {
    let (min, max) = (-lo, size - hi);
    if max < min {
        None
    } else if max == min {
        Some(min)
    } else {
        Some(rng.random_range(min..=max))
    }
}

/// Draws a random prism. Vertices are angularly sorted points on a
/// random-radius star around the center, which keeps the polygon simple.
pub fn sample_prism_spec(seed: u64, dims: (usize, usize, usize), cfg: &GenConfig) -> Result<PolygonPrism> {
    let (b, m, n) = dims;
    cfg.validate(b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (m * n) as f64;
    let (fmin, fmax) = cfg.area_fraction_range;
    let in_bounds = |mask: &Mask| {
        let frac = mask.count() as f64 / pixels;
        frac >= fmin && frac <= fmax
    };

    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let v = rng.random_range(cfg.vertex_range.0..=cfg.vertex_range.1);
        let target = rng.random_range(fmin..=fmax);
        let unit: Vec<Point2> = (0..v)
            .map(|k| {
                let theta = 2.0 * PI * (k as f64 + 0.8 * rng.random::<f64>()) / v as f64;
                let radius = rng.random_range(0.4..=1.0);
                Point2::new(radius * theta.sin(), radius * theta.cos())
            })
            .collect();
        let unit_area = polygon_area(&unit).abs();
        if unit_area < 1e-9 {
            continue;
        }
        let scale = (target * pixels / unit_area).sqrt();
        let local: Vec<Point2> =
            unit.iter().map(|p| Point2::new(p.row * scale, p.col * scale)).collect();

        let rotation_deg = rng.random_range(0.0..360.0);
        let (sin, cos) = rotation(rotation_deg);
        let turned: Vec<Point2> = local.iter().map(|&p| rotate(p, sin, cos)).collect();

        let (r0, r1, c0, c1) = bbox(&local);
        let (tr0, tr1, tc0, tc1) = bbox(&turned);
        let (Some(sr), Some(sc), Some(dr), Some(dc)) = (
            place(&mut rng, r0, r1, m as f64),
            place(&mut rng, c0, c1, n as f64),
            place(&mut rng, tr0, tr1, m as f64),
            place(&mut rng, tc0, tc1, n as f64),
        ) else {
            continue;
        };

        let band_count = rng.random_range(cfg.band_count_range.0..=cfg.band_count_range.1);
        let band_start = rng.random_range(0..=b - band_count);
        let spec = PolygonPrism {
            vertices: local.iter().map(|p| Point2::new(p.row + sr, p.col + sc)).collect(),
            band_start,
            band_count,
            rotation_deg,
            src_anchor: Point2::new(sr, sc),
            dst_anchor: Point2::new(dr, dc),
        };
        if spec.validate(dims).is_err() {
            continue;
        }
        if in_bounds(&spec.source_footprint((m, n))) && in_bounds(&spec.footprint((m, n))) {
            return Ok(spec);
        }
    }
    Err(SapError::Infeasible(format!(
        "no prism satisfied the bounds within {MAX_SAMPLE_ATTEMPTS} attempts"
    )))
}

/// Pastes the rotated prism into a copy of `x`.
///
/// Each destination footprint pixel takes the source pixel containing the
/// inverse-rotated position of its center (nearest-neighbor), over the
/// prism's band interval only.
pub fn generate_pseudo_anomaly(x: &HsiCube, spec: &PolygonPrism) -> Result<HsiCube> {
    let (m, n) = (x.height(), x.width());
    spec.validate((x.bands(), m, n))?;
    let footprint = spec.footprint((m, n));
    let (sin, cos) = rotation(spec.rotation_deg);
    let mut y = x.clone();
    for (i, j) in footprint.pixels() {
        let q = Point2::new(i as f64 + 0.5 - spec.dst_anchor.row, j as f64 + 0.5 - spec.dst_anchor.col);
        let p = rotate(q, -sin, cos);
        let si = (p.row + spec.src_anchor.row).floor();
        let sj = (p.col + spec.src_anchor.col).floor();
        if si < -1e-9 || sj < -1e-9 || si > m as f64 || sj > n as f64 {
            return Err(SapError::Shape("rotated footprint exceeds image bounds".into()));
        }
        let si = (si.max(0.0) as usize).min(m - 1);
        let sj = (sj.max(0.0) as usize).min(n - 1);
        for band in spec.bands() {
            y.set(band, i, j, x.get(band, si, sj))?;
        }
    }
    Ok(y)
}

/// One clean/pseudo-anomaly training pair with its supervisory signals.
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub x: HsiCube,
    pub y: HsiCube,
    pub spec: PolygonPrism,
}

impl LabeledPair {
    pub const LABEL_X: u8 = 0;
    pub const LABEL_Y: u8 = 1;

    pub fn synthesize(x: HsiCube, seed: u64, cfg: &GenConfig) -> Result<Self> {
        let spec = sample_prism_spec(seed, (x.bands(), x.height(), x.width()), cfg)?;
        let y = generate_pseudo_anomaly(&x, &spec)?;
        Ok(Self { x, y, spec })
    }
}
