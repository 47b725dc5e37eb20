//! Eigenvalue-based noise level estimation and the subspace-shrinkage denoiser.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::sorted_eigen;
use crate::error::{Result, SapError};

/// Eigenvalues are peeled off while `mean > MEDIAN_RATIO · median`.
pub const MEDIAN_RATIO: f64 = 2.0;
/// The denoiser keeps directions whose eigenvalue exceeds `KEEP_RATIO · σ²`.
pub const KEEP_RATIO: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub sigma: f64,
    /// Number of eigenvalues attributed to signal.
    pub retained_dim: usize,
}

struct Covariance {
    mean: DVector<f64>,
    centered: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

fn covariance(m: &DMatrix<f64>) -> Covariance {
    let mean = m.column_mean();
    let mut centered = m.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let n = m.ncols().max(2) as f64;
    let cov = (&centered * centered.transpose()) / (n - 1.0);
    let (mut eigenvalues, eigenvectors) = sorted_eigen(cov);
    for v in &mut eigenvalues {
        *v = v.max(0.0);
    }
    Covariance { mean, centered, eigenvalues, eigenvectors }
}

fn median(sorted_desc: &[f64]) -> f64 {
    let n = sorted_desc.len();
    if n % 2 == 1 {
        sorted_desc[n / 2]
    } else {
        0.5 * (sorted_desc[n / 2 - 1] + sorted_desc[n / 2])
    }
}

fn estimate_from_eigenvalues(eigenvalues: &[f64]) -> NoiseEstimate {
    let mut removed = 0;
    let mut rest = eigenvalues;
    while rest.len() > 1 {
        let mean = rest.iter().sum::<f64>() / rest.len() as f64;
        if mean > MEDIAN_RATIO * median(rest) {
            rest = &rest[1..];
            removed += 1;
        } else {
            break;
        }
    }
    let mean = rest.iter().sum::<f64>() / rest.len() as f64;
    NoiseEstimate { sigma: mean.max(0.0).sqrt(), retained_dim: removed }
}

/// Per-entry noise standard deviation of `m`, treating rows as variables and
/// columns as samples.
pub fn estimate_noise(m: &DMatrix<f64>) -> Result<NoiseEstimate> {
    if m.nrows() < 4 {
        return Err(SapError::InvalidArgument(format!(
            "noise estimation needs at least 4 rows, got {}",
            m.nrows()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SapError::Numerical("non-finite input to noise estimation".into()));
    }
    Ok(estimate_from_eigenvalues(&covariance(m).eigenvalues))
}

/// Plug-in denoiser for the auxiliary-variable step.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, noisy: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, noisy: &DMatrix<f64>, _sigma: f64) -> Result<DMatrix<f64>> {
        Ok(noisy.clone())
    }
}

/// Projects each column (after mean removal) onto the eigenvectors of the
/// sample covariance whose eigenvalues exceed `KEEP_RATIO · σ²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubspaceShrinkage;

impl Denoiser for SubspaceShrinkage {
    fn denoise(&self, noisy: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
        let cov = covariance(noisy);
        let floor = KEEP_RATIO * sigma * sigma;
        let k = cov.eigenvalues.iter().take_while(|&&v| v > floor).count();
        let mut out = if k == 0 {
            DMatrix::zeros(noisy.nrows(), noisy.ncols())
        } else {
            let basis = cov.eigenvectors.columns(0, k);
            basis * (basis.transpose() * &cov.centered)
        };
        for mut col in out.column_iter_mut() {
            col += &cov.mean;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Identity,
    #[default]
    SubspaceShrinkage,
}

impl DenoiserKind {
    pub fn build(self) -> Box<dyn Denoiser> {
        match self {
            DenoiserKind::Identity => Box::new(IdentityDenoiser),
            DenoiserKind::SubspaceShrinkage => Box::new(SubspaceShrinkage),
        }
    }
}
