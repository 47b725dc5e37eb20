//! The target task: score overlapping cubes of the anomaly residual with a
//! feature extractor, turn the scores into a binary guided map and gate the
//! residual with it.

mod cubes;
mod features;
mod scoring;
pub mod weights;

pub use cubes::{split_cubes, CubePosition};
pub use features::{CnnExtractor, Cube, FallbackExtractor, FeatureExtractor};
pub use scoring::{
    adaptive_threshold, apply_guided_map, mahalanobis_scores, otsu_bin_threshold, propagate_raw, propagate_scores,
    DetectionMap, GuidedMap, ThresholdMethod, OTSU_BINS,
};
pub use weights::CnnWeights;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::solver::AnomalyPrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub cube_size: usize,
    pub stride: usize,
    pub feature_dim: usize,
    /// Defaults to `cube_size / 2`.
    pub kernel_sigma: Option<f64>,
    pub threshold_method: ThresholdMethod,
    pub k: f64,
    pub cov_ridge: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            cube_size: 16,
            stride: 8,
            feature_dim: 64,
            kernel_sigma: None,
            threshold_method: ThresholdMethod::Otsu,
            k: 2.0,
            cov_ridge: 1e-6,
        }
    }
}

impl PriorConfig {
    pub fn sigma(&self) -> f64 {
        self.kernel_sigma.unwrap_or(self.cube_size as f64 / 2.0)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.stride == 0 || self.stride > self.cube_size {
            return Err(SapError::InvalidArgument(format!(
                "stride {} must lie in 1..={}",
                self.stride, self.cube_size
            )));
        }
        if self.cube_size > height.min(width) {
            return Err(SapError::InvalidArgument(format!(
                "cube size {} exceeds the {height}x{width} grid",
                self.cube_size
            )));
        }
        if self.feature_dim < 2 {
            return Err(SapError::InvalidArgument("feature_dim must be at least 2".into()));
        }
        if !(self.sigma() > 0.0) || !(self.cov_ridge > 0.0) {
            return Err(SapError::InvalidArgument("kernel sigma and covariance ridge must be positive".into()));
        }
        Ok(())
    }
}

/// `K × F` cube features with the cube corners they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: DMatrix<f64>,
    pub positions: Vec<CubePosition>,
}

impl FeatureMatrix {
    pub fn k(&self) -> usize {
        self.rows.nrows()
    }

    pub fn f(&self) -> usize {
        self.rows.ncols()
    }
}

/// Runs the extractor on every cube of `z` (`channels × height·width`).
pub fn extract_features(
    z: &DMatrix<f64>,
    width: usize,
    positions: &[CubePosition],
    size: usize,
    extractor: &dyn FeatureExtractor,
) -> Result<FeatureMatrix> {
    if z.nrows() != extractor.input_channels() {
        return Err(SapError::Weights(format!(
            "extractor takes {} channels, residual has {}",
            extractor.input_channels(),
            z.nrows()
        )));
    }
    let rows: Vec<Vec<f64>> = positions
        .par_iter()
        .map(|p| extractor.extract(&Cube::from_unfolded(z, width, p.top, p.left, size)))
        .collect::<Result<_>>()?;
    let f = extractor.feature_dim();
    let mut m = DMatrix::zeros(rows.len(), f);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != f {
            return Err(SapError::Weights(format!("extractor returned {} features, declared {f}", r.len())));
        }
        for (j, &v) in r.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(FeatureMatrix { rows: m, positions: positions.to_vec() })
}

#[derive(Debug, Clone)]
pub struct PriorOutput {
    pub a: DMatrix<f64>,
    pub map: DetectionMap,
    pub guided: GuidedMap,
    pub cube_scores: Vec<f64>,
}

pub fn run_target_task(
    z: &DMatrix<f64>,
    height: usize,
    width: usize,
    extractor: &dyn FeatureExtractor,
    cfg: &PriorConfig,
) -> Result<PriorOutput> {
    cfg.validate(height, width)?;
    if z.ncols() != height * width {
        return Err(SapError::Shape(format!("{} pixels for a {height}x{width} grid", z.ncols())));
    }
    let positions = split_cubes(height, width, cfg.cube_size, cfg.stride)?;
    let features = extract_features(z, width, &positions, cfg.cube_size, extractor)?;
    let cube_scores = if features.k() >= 2 {
        mahalanobis_scores(&features.rows, cfg.cov_ridge)?
    } else {
        vec![0.0]
    };
    let map = propagate_scores(&cube_scores, &positions, cfg.cube_size, height, width, cfg.sigma())?;
    let guided = adaptive_threshold(&map, cfg.threshold_method, cfg.k)?;
    let a = apply_guided_map(&guided, z)?;
    Ok(PriorOutput { a, map, guided, cube_scores })
}

/// Anomaly prior backed by a feature extractor.
pub struct TargetTask {
    pub cfg: PriorConfig,
    extractor: Box<dyn FeatureExtractor>,
}

impl TargetTask {
    pub fn new(extractor: Box<dyn FeatureExtractor>, cfg: PriorConfig) -> Self {
        Self { cfg, extractor }
    }

    pub fn fallback(channels: usize, seed: u64, cfg: PriorConfig) -> Self {
        let extractor = FallbackExtractor::new(channels, cfg.feature_dim, seed);
        Self::new(Box::new(extractor), cfg)
    }

    pub fn cnn(weights: CnnWeights, cfg: PriorConfig) -> Self {
        Self::new(Box::new(CnnExtractor::new(weights)), cfg)
    }

    pub fn extractor(&self) -> &dyn FeatureExtractor {
        self.extractor.as_ref()
    }
}

impl AnomalyPrior for TargetTask {
    fn target_task(&self, z: &DMatrix<f64>, height: usize, width: usize) -> Result<PriorOutput> {
        run_target_task(z, height, width, self.extractor.as_ref(), &self.cfg)
    }
}
