//! Seeded synthetic scene with known anomalies, used by tests, examples and
//! the `sap fixture` command.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::hsi::{fold_matrix, HsiCube};
use crate::pseudo_anomaly::{rasterize_polygon, Point2};

pub const FIXTURE_BANDS: usize = 48;
pub const FIXTURE_SIZE: usize = 64;
pub const FIXTURE_SEED: u64 = 2024;
pub const FIXTURE_NOISE: f64 = 0.002;

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cube: HsiCube,
    /// Row-major anomaly mask.
    pub truth: Vec<bool>,
    pub background_rank: usize,
}

impl SyntheticScene {
    pub fn anomaly_count(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    /// Truth as a one-band cube of 0/1 values.
    pub fn truth_cube(&self) -> HsiCube {
        let data = self.truth.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        HsiCube::new(1, self.cube.height(), self.cube.width(), data).expect("truth dims")
    }
}

fn smooth_spectrum(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.08..0.3), rng.random_range(0.2..1.0)))
        .collect();
    let base = rng.random_range(0.1..0.3);
    (0..bands)
        .map(|b| {
            let x = b as f64 / (bands - 1) as f64;
            base + bumps.iter().map(|&(c, w, a)| a * (-((x - c) / w).powi(2)).exp()).sum::<f64>()
        })
        .collect()
}

/// Three endmembers mixed by smooth abundance fields, plus three polygonal
/// implants whose spectra lie outside the background span.
pub fn synthetic_scene(seed: u64) -> Result<SyntheticScene> {
    let (bands, m, n) = (FIXTURE_BANDS, FIXTURE_SIZE, FIXTURE_SIZE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = 3;
    let endmembers: Vec<Vec<f64>> = (0..rank).map(|_| smooth_spectrum(bands, &mut rng)).collect();

    let waves: Vec<(f64, f64, f64)> = (0..rank)
        .map(|_| (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let mut abundances = DMatrix::zeros(rank, m * n);
    for p in 0..m * n {
        let (r, c) = ((p / n) as f64 / m as f64, (p % n) as f64 / n as f64);
        let raw: Vec<f64> = waves
            .iter()
            .map(|&(fr, fc, ph)| 1.2 + (std::f64::consts::TAU * (fr * r + fc * c) + ph).sin())
            .collect();
        let total: f64 = raw.iter().sum();
        for k in 0..rank {
            abundances[(k, p)] = raw[k] / total;
        }
    }
    let em = DMatrix::from_fn(bands, rank, |b, k| endmembers[k][b]);
    let mut x = em * abundances;

    let shapes: [&[(f64, f64)]; 3] = [
        &[(10.2, 8.3), (17.6, 10.1), (15.4, 17.8), (8.5, 14.6)],
        &[(40.3, 44.2), (44.1, 50.7), (50.6, 49.4), (48.2, 42.1), (43.0, 40.5)],
        &[(14.5, 47.2), (21.8, 50.3), (18.1, 56.6)],
    ];
    let mut truth = vec![false; m * n];
    for verts in shapes {
        let poly: Vec<Point2> = verts.iter().map(|&(r, c)| Point2::new(r, c)).collect();
        let spectrum = smooth_spectrum(bands, &mut rng);
        let mask = rasterize_polygon(&poly, (m, n));
        for (r, c) in mask.pixels() {
            let p = r * n + c;
            truth[p] = true;
            for b in 0..bands {
                x[(b, p)] = spectrum[b];
            }
        }
    }

    let noise = Normal::new(0.0, FIXTURE_NOISE).expect("valid std");
    for v in x.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    Ok(SyntheticScene { cube: fold_matrix(&x, m, n)?, truth, background_rank: rank })
}

/// The bundled fixture.
pub fn default_scene() -> SyntheticScene {
    synthetic_scene(FIXTURE_SEED).expect("fixture dimensions are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape_and_truth() {
        let s = default_scene();
        assert_eq!((s.cube.bands(), s.cube.height(), s.cube.width()), (48, 64, 64));
        let count = s.anomaly_count();
        assert!(count > 40 && count < 200, "{count}");
    }

    #[test]
    fn fixture_is_deterministic() {
        assert_eq!(default_scene().cube, default_scene().cube);
    }
}
