//! End-to-end detection: normalize, build the dictionary, solve, and turn the
//! anomaly component into a score map.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::{build_dictionary, BackgroundDictionary, DictConfig, LatentHsi};
use crate::error::{Result, SapError};
use crate::hsi::{normalize, HsiCube, NormalizeMode};
use crate::prior::{CnnWeights, DetectionMap, PriorConfig, TargetTask};
use crate::solver::{solve, solve_l21, BaselineConfig, SolveOutput, SolverConfig};

/// How the A-step is solved.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorChoice {
    Fallback { seed: u64 },
    Cnn(CnnWeights),
    L21 { beta: f64 },
}

impl PriorChoice {
    /// `fallback:<seed>` or `l21:<beta>`; `cnn:<path>` loads the weights file.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| SapError::InvalidArgument(format!("prior {spec:?} is not of the form kind:arg")))?;
        match kind {
            "fallback" => arg
                .parse()
                .map(|seed| Self::Fallback { seed })
                .map_err(|_| SapError::InvalidArgument(format!("fallback seed {arg:?}"))),
            "cnn" => Ok(Self::Cnn(CnnWeights::load(arg)?)),
            "l21" => arg
                .parse()
                .map(|beta| Self::L21 { beta })
                .map_err(|_| SapError::InvalidArgument(format!("l21 beta {arg:?}"))),
            other => Err(SapError::InvalidArgument(format!("unknown prior backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub normalize: NormalizeMode,
    pub dict: DictConfig,
    pub prior: PriorConfig,
    pub solver: SolverConfig,
}

/// Per-pixel `‖A_p‖₂`, min-max normalized.
pub fn detection_map(a: &DMatrix<f64>, height: usize, width: usize) -> Result<DetectionMap> {
    let energy = a.column_iter().map(|c| c.norm()).collect();
    Ok(DetectionMap::new(height, width, energy)?.normalize())
}

/// Runs the solver on an existing latent cube and dictionary.
pub fn detect(
    latent: &DMatrix<f64>,
    dictionary: &DMatrix<f64>,
    height: usize,
    width: usize,
    prior: &PriorChoice,
    prior_cfg: &PriorConfig,
    solver_cfg: &SolverConfig,
) -> Result<(SolveOutput, DetectionMap)> {
    let out = match prior {
        PriorChoice::Fallback { seed } => {
            let task = TargetTask::fallback(latent.nrows(), *seed, prior_cfg.clone());
            solve(latent, dictionary, height, width, &task, solver_cfg)?
        }
        PriorChoice::Cnn(weights) => {
            if weights.input_bands != latent.nrows() {
                return Err(SapError::Weights(format!(
                    "network takes {} bands, latent cube has {}",
                    weights.input_bands,
                    latent.nrows()
                )));
            }
            let cfg = PriorConfig { feature_dim: weights.feature_dim, ..prior_cfg.clone() };
            let task = TargetTask::cnn(weights.clone(), cfg);
            solve(latent, dictionary, height, width, &task, solver_cfg)?
        }
        PriorChoice::L21 { beta } => {
            solve_l21(latent, dictionary, height, width, &BaselineConfig::new(*beta)?, solver_cfg)?
        }
    };
    let map = detection_map(out.a(), height, width)?;
    Ok((out, map))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub latent: LatentHsi,
    pub dictionary: BackgroundDictionary,
    pub solve: SolveOutput,
    pub map: DetectionMap,
}

pub fn run_pipeline(cube: &HsiCube, prior: &PriorChoice, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let normalized = normalize(cube, cfg.normalize);
    let (latent, dictionary) = build_dictionary(&normalized, &cfg.dict)?;
    let (solve, map) = detect(
        latent.values(),
        &dictionary.atoms,
        cube.height(),
        cube.width(),
        prior,
        &cfg.prior,
        &cfg.solver,
    )?;
    Ok(PipelineOutput { latent, dictionary, solve, map })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_specs_parse() {
        assert_eq!(PriorChoice::parse("fallback:7").unwrap(), PriorChoice::Fallback { seed: 7 });
        assert_eq!(PriorChoice::parse("l21:0.3").unwrap(), PriorChoice::L21 { beta: 0.3 });
        assert!(PriorChoice::parse("fallback").is_err());
        assert!(PriorChoice::parse("resnet:1").is_err());
        assert!(matches!(PriorChoice::parse("cnn:/no/such/file.sapw"), Err(SapError::MissingFile(_))));
    }

    #[test]
    fn detection_map_is_normalized_energy() {
        let a = DMatrix::from_column_slice(2, 3, &[3.0, 4.0, 0.0, 0.0, 0.0, 10.0]);
        let map = detection_map(&a, 1, 3).unwrap();
        assert_eq!(map.scores, vec![0.5, 0.0, 1.0]);
    }
}
