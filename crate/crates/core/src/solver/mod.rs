//! Plug-and-play ADMM for the low-rank representation model
//!
//! ```text
//! min ½‖φ(H) − DE − A‖²_F + ψ(J) + γ(A)   s.t. E = J
//! ```
//!
//! Each iteration runs the E-step (ridge normal equations), the J-step
//! (denoiser driven by an estimated noise level), the A-step (anomaly prior,
//! or row-wise ℓ2,1 shrinkage for the baseline) and the multiplier update.
//! The loop stops once both `‖J − E‖` and the change in `J` fall below `tol`
//! relative to `max(1, ‖E‖)`.

mod noise;

pub use noise::{
    estimate_noise, Denoiser, DenoiserKind, IdentityDenoiser, NoiseEstimate, SubspaceShrinkage, KEEP_RATIO,
    MEDIAN_RATIO,
};

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::prior::PriorOutput;

/// Anomaly sub-problem solver: maps the residual `Z = φ(H) − DE` to `A`.
pub trait AnomalyPrior {
    fn target_task(&self, z: &DMatrix<f64>, height: usize, width: usize) -> Result<PriorOutput>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub alpha: f64,
    pub denoiser: DenoiserKind,
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iter: 30, tol: 1e-4, alpha: 1.0, denoiser: DenoiserKind::SubspaceShrinkage, record_history: true }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(SapError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SapError::InvalidArgument("tol must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SapError::InvalidArgument("alpha must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub beta: f64,
}

impl BaselineConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(SapError::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }
}

/// Iterates of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub e: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub alpha: f64,
}

impl AdmmState {
    /// All-zero start with the given penalty.
    pub fn zeros(nb: usize, latent_dim: usize, pixels: usize, alpha: f64) -> Self {
        Self {
            e: DMatrix::zeros(nb, pixels),
            a: DMatrix::zeros(latent_dim, pixels),
            j: DMatrix::zeros(nb, pixels),
            l: DMatrix::zeros(nb, pixels),
            alpha,
        }
    }

    fn is_finite(&self) -> bool {
        [&self.e, &self.a, &self.j, &self.l].iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖J − E‖_F / max(1, ‖E‖_F)`.
    pub primal_residual: f64,
    /// `α‖J − J_prev‖_F / max(1, ‖E‖_F)`.
    pub dual_residual: f64,
    /// `‖φ(H) − DE − A‖_F`.
    pub data_fit: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub state: AdmmState,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Output of the last A-step when a learned prior was used.
    pub prior: Option<PriorOutput>,
}

impl SolveOutput {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.state.a
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.state.e
    }

    /// Per-pixel ℓ2 norm of the anomaly component.
    pub fn anomaly_energy(&self) -> Vec<f64> {
        self.state.a.column_iter().map(|c| c.norm()).collect()
    }

    pub fn final_primal_residual(&self) -> Option<f64> {
        self.history.last().map(|r| r.primal_residual)
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,primal_residual,data_fit,dual_residual\n");
        for r in &self.history {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.iter, r.primal_residual, r.data_fit, r.dual_residual));
        }
        out
    }
}

fn check_shapes(phi: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<()> {
    if d.nrows() != phi.nrows() {
        return Err(SapError::Shape(format!(
            "dictionary has {} rows but the latent cube has {}",
            d.nrows(),
            phi.nrows()
        )));
    }
    if d.ncols() == 0 {
        return Err(SapError::Empty("dictionary has no atoms".into()));
    }
    Ok(())
}

/// Cached factorization of `DᵀD + αI`.
pub struct EStep {
    d: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl EStep {
    pub fn new(d: &DMatrix<f64>, alpha: f64) -> Result<Self> {
        let mut gram = d.transpose() * d;
        for i in 0..gram.nrows() {
            gram[(i, i)] += alpha;
        }
        let chol = Cholesky::new(gram)
            .ok_or_else(|| SapError::Numerical("DᵀD + αI is not positive definite".into()))?;
        Ok(Self { d: d.clone(), chol })
    }

    /// Solves `(DᵀD + αI)E = Dᵀ(φ − A) + αJ + L`.
    pub fn solve(&self, phi: &DMatrix<f64>, a: &DMatrix<f64>, j: &DMatrix<f64>, l: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
        let nb = self.d.ncols();
        if phi.shape() != a.shape() || phi.nrows() != self.d.nrows() {
            return Err(SapError::Shape(format!(
                "φ(H) {:?}, A {:?}, D {:?}",
                phi.shape(),
                a.shape(),
                self.d.shape()
            )));
        }
        if j.shape() != (nb, phi.ncols()) || l.shape() != (nb, phi.ncols()) {
            return Err(SapError::Shape(format!("J {:?} and L {:?} for nb = {nb}", j.shape(), l.shape())));
        }
        let mut rhs = self.d.transpose() * (phi - a);
        rhs += j * alpha;
        rhs += l;
        Ok(self.chol.solve(&rhs))
    }
}

pub fn e_step(
    d: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    a: &DMatrix<f64>,
    j: &DMatrix<f64>,
    l: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    EStep::new(d, alpha)?.solve(phi, a, j, l, alpha)
}

/// `J = denoise(E − L/α, σ̂)` with `σ̂` estimated from the same input.
pub fn j_step(
    e: &DMatrix<f64>,
    l: &DMatrix<f64>,
    alpha: f64,
    denoiser: &dyn Denoiser,
) -> Result<(DMatrix<f64>, NoiseEstimate)> {
    if e.shape() != l.shape() {
        return Err(SapError::Shape(format!("E {:?} vs L {:?}", e.shape(), l.shape())));
    }
    let noisy = e - l / alpha;
    let estimate = if noisy.nrows() >= 4 {
        estimate_noise(&noisy)?
    } else {
        NoiseEstimate { sigma: 0.0, retained_dim: noisy.nrows() }
    };
    Ok((denoiser.denoise(&noisy, estimate.sigma)?, estimate))
}

pub fn a_step(
    phi: &DMatrix<f64>,
    d: &DMatrix<f64>,
    e: &DMatrix<f64>,
    prior: &dyn AnomalyPrior,
    height: usize,
    width: usize,
) -> Result<PriorOutput> {
    let z = phi - d * e;
    let out = prior.target_task(&z, height, width)?;
    if out.a.shape() != z.shape() {
        return Err(SapError::Shape(format!("prior returned {:?}, expected {:?}", out.a.shape(), z.shape())));
    }
    Ok(out)
}

pub fn l_step(l: &DMatrix<f64>, j: &DMatrix<f64>, e: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    l + (j - e) * alpha
}

/// Row-wise proximal operator of `β‖·‖₂,₁`.
pub fn prox_l21(z: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        let scale = if norm > 0.0 { (1.0 - beta / norm).max(0.0) } else { 0.0 };
        row *= scale;
    }
    out
}

/// `½‖φ − DE − A‖²_F + β Σ_p ‖A_p‖₂` with pixels as columns of `A`.
pub fn l21_objective(phi: &DMatrix<f64>, d: &DMatrix<f64>, e: &DMatrix<f64>, a: &DMatrix<f64>, beta: f64) -> f64 {
    let fit = (phi - d * e - a).norm_squared();
    0.5 * fit + beta * a.column_iter().map(|c| c.norm()).sum::<f64>()
}

enum AStep<'a> {
    Prior(&'a dyn AnomalyPrior),
    L21(f64),
}

fn run(
    phi: &DMatrix<f64>,
    d: &DMatrix<f64>,
    height: usize,
    width: usize,
    a_update: AStep<'_>,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    cfg.validate()?;
    check_shapes(phi, d)?;
    if phi.ncols() != height * width {
        return Err(SapError::Shape(format!("{} pixels for a {height}x{width} grid", phi.ncols())));
    }
    let denoiser = cfg.denoiser.build();
    let e_solver = EStep::new(d, cfg.alpha)?;
    let mut state = AdmmState::zeros(d.ncols(), phi.nrows(), phi.ncols(), cfg.alpha);
    let mut history = Vec::new();
    let mut last_prior = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        state.e = e_solver.solve(phi, &state.a, &state.j, &state.l, state.alpha)?;
        let (j, noise) = j_step(&state.e, &state.l, state.alpha, denoiser.as_ref())?;
        let j_shift = (&j - &state.j).norm();
        state.j = j;
        match &a_update {
            AStep::Prior(prior) => {
                let out = a_step(phi, d, &state.e, *prior, height, width)?;
                state.a = out.a.clone();
                last_prior = Some(out);
            }
            AStep::L21(beta) => {
                // pixels are the columns of Z; shrink each pixel's spectrum
                let z = phi - d * &state.e;
                state.a = prox_l21(&z.transpose(), *beta).transpose();
            }
        }
        state.l = l_step(&state.l, &state.j, &state.e, state.alpha);

        if !state.is_finite() {
            return Err(SapError::Divergence { iter: iterations, msg: "non-finite iterate".into() });
        }
        let e_norm = state.e.norm();
        let primal = (&state.j - &state.e).norm() / e_norm.max(1.0);
        let dual = state.alpha * j_shift / e_norm.max(1.0);
        if cfg.record_history {
            history.push(IterationRecord {
                iter: iterations,
                primal_residual: primal,
                dual_residual: dual,
                data_fit: (phi - d * &state.e - &state.a).norm(),
                noise_sigma: noise.sigma,
            });
        }
        if primal < cfg.tol && dual < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(SolveOutput { state, history, iterations, converged, prior: last_prior })
}

/// ADMM with the learned anomaly prior in the A-step.
pub fn solve(
    phi: &DMatrix<f64>,
    d: &DMatrix<f64>,
    height: usize,
    width: usize,
    prior: &dyn AnomalyPrior,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    run(phi, d, height, width, AStep::Prior(prior), cfg)
}

/// ADMM with the handcrafted ℓ2,1 sparsity prior in the A-step.
pub fn solve_l21(
    phi: &DMatrix<f64>,
    d: &DMatrix<f64>,
    height: usize,
    width: usize,
    baseline: &BaselineConfig,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    run(phi, d, height, width, AStep::L21(baseline.beta), cfg)
}
