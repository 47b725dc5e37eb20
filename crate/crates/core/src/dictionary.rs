//! Latent HSI extraction and the dual-purified background dictionary.
//!
//! The latent cube comes from either a PCA rotation or a single-hidden-layer
//! linear autoencoder trained with a spectral distribution constraint (SDC).
//! The dictionary keeps latent pixels after two purification passes: the
//! smallest spectral cluster is dropped whole, then each surviving cluster
//! loses its low-probability members.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::hsi::{decode_f32_le, encode_f32_le, unfold, HsiCube, UnfoldedMatrix};
use crate::spectral::{kmeans_columns, sad};

pub const DEFAULT_LATENT_DIM: usize = 48;
pub const AE_STEPS: usize = 500;
pub const AE_STEP_SIZE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentBackend {
    LinearAe,
    #[default]
    Pca,
}

impl std::str::FromStr for LatentBackend {
    type Err = SapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Self::Pca),
            "linear_ae" => Ok(Self::LinearAe),
            other => Err(SapError::InvalidArgument(format!("unknown latent backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictConfig {
    pub n_clusters: usize,
    pub drop_quantile: f64,
    pub sdc_weight: f64,
    pub sdc_clusters: usize,
    pub temperature: f64,
    pub latent_backend: LatentBackend,
    pub latent_dim: usize,
    /// Upper bound on atoms; survivors are thinned evenly in pixel order.
    pub max_atoms: Option<usize>,
    pub seed: u64,
}

impl Default for DictConfig {
    fn default() -> Self {
        Self {
            n_clusters: 8,
            drop_quantile: 0.10,
            sdc_weight: 1e-3,
            sdc_clusters: 2,
            temperature: 1.0,
            latent_backend: LatentBackend::Pca,
            latent_dim: DEFAULT_LATENT_DIM,
            max_atoms: Some(256),
            seed: 0,
        }
    }
}

impl DictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 2 {
            return Err(SapError::InvalidArgument("n_clusters must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.drop_quantile) {
            return Err(SapError::InvalidArgument(format!("drop quantile {}", self.drop_quantile)));
        }
        if !(self.sdc_weight >= 0.0) {
            return Err(SapError::InvalidArgument("sdc weight must be non-negative".into()));
        }
        if self.sdc_clusters == 0 || !(self.temperature > 0.0) || self.latent_dim == 0 {
            return Err(SapError::InvalidArgument("sdc clusters, temperature and latent dim must be positive".into()));
        }
        if self.max_atoms == Some(0) {
            return Err(SapError::InvalidArgument("max_atoms must be positive".into()));
        }
        Ok(())
    }
}

/// Latent cube plus the linear map that produced it.
#[derive(Debug, Clone)]
pub struct LatentHsi {
    pub matrix: UnfoldedMatrix,
    /// `dim × bands`; latent = encoder · (h − mean).
    pub encoder: DMatrix<f64>,
    /// `bands × dim`.
    pub decoder: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Training loss per step (linear autoencoder only; index 0 is the initial loss).
    pub loss_history: Vec<f64>,
}

impl LatentHsi {
    /// Wraps an already computed latent matrix with identity encoder/decoder.
    pub fn from_matrix(matrix: UnfoldedMatrix) -> Self {
        let dim = matrix.rows();
        Self {
            matrix,
            encoder: DMatrix::identity(dim, dim),
            decoder: DMatrix::identity(dim, dim),
            mean: DVector::zeros(dim),
            loss_history: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        self.matrix.values()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut out = &self.decoder * self.matrix.values();
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }
}

fn centered(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = x.column_mean();
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        col -= &mean;
    }
    (xc, mean)
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue, with
/// each eigenvector's largest-magnitude entry made positive.
pub(crate) fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(k, &v);
    }
    (values, vectors)
}

pub fn extract_latent(h: &HsiCube, cfg: &DictConfig) -> Result<LatentHsi> {
    cfg.validate()?;
    if h.bands() < cfg.latent_dim {
        return Err(SapError::InvalidArgument(format!(
            "{} bands cannot be reduced to a {}-dimensional latent space",
            h.bands(),
            cfg.latent_dim
        )));
    }
    let x = unfold(h);
    match cfg.latent_backend {
        LatentBackend::Pca => pca_latent(&x, cfg.latent_dim),
        LatentBackend::LinearAe => linear_ae_latent(&x, cfg),
    }
}

fn pca_latent(x: &UnfoldedMatrix, dim: usize) -> Result<LatentHsi> {
    let (xc, mean) = centered(x.values());
    let n = xc.ncols().max(2) as f64;
    let cov = (&xc * xc.transpose()) / (n - 1.0);
    let (_, vectors) = sorted_eigen(cov);
    let basis = vectors.columns(0, dim).clone_owned();
    let encoder = basis.transpose();
    let latent = &encoder * &xc;
    Ok(LatentHsi {
        matrix: UnfoldedMatrix::new(latent, x.origin_height(), x.origin_width())?,
        encoder,
        decoder: basis,
        mean,
        loss_history: Vec::new(),
    })
}

/// Cluster structure used by the SDC term: a k-means partition of the
/// original spectra and, per cluster, the member closest in angle to the
/// cluster center.
#[derive(Debug, Clone, PartialEq)]
pub struct SdcClusters {
    pub n_clusters: usize,
    pub assignments: Vec<usize>,
    /// Pixel index of each cluster's representative.
    pub representatives: Vec<usize>,
}

impl SdcClusters {
    pub fn compute(h: &DMatrix<f64>, n_clusters: usize, seed: u64) -> Result<Self> {
        let km = kmeans_columns(h, n_clusters, seed)?;
        let mut best: Vec<Option<(usize, f64)>> = vec![None; n_clusters];
        for (i, &c) in km.assignments.iter().enumerate() {
            let col: Vec<f64> = h.column(i).iter().copied().collect();
            let angle = sad(&col, &km.centers[c])?;
            if best[c].is_none_or(|(_, a)| angle < a) {
                best[c] = Some((i, angle));
            }
        }
        let representatives = best
            .into_iter()
            .enumerate()
            .map(|(c, b)| b.map(|(i, _)| i).unwrap_or(c))
            .collect();
        Ok(Self { n_clusters, assignments: km.assignments, representatives })
    }

    pub fn representative_of(&self, pixel: usize) -> usize {
        self.representatives[self.assignments[pixel]]
    }
}

fn column_sad(m: &DMatrix<f64>, i: usize, j: usize) -> Result<f64> {
    if i == j {
        let norm = m.column(i).norm();
        return if norm > 0.0 { Ok(0.0) } else { Err(SapError::ZeroNorm) };
    }
    let a: Vec<f64> = m.column(i).iter().copied().collect();
    let b: Vec<f64> = m.column(j).iter().copied().collect();
    sad(&a, &b)
}

/// `(1/C) Σ SAD(h_i, h_c) − (1/C) Σ SAD(φ(h_i), φ(h_c))` for a given clustering.
pub fn sdc_loss_with(h: &DMatrix<f64>, phi: &DMatrix<f64>, clusters: &SdcClusters) -> Result<f64> {
    if h.ncols() != phi.ncols() || h.ncols() != clusters.assignments.len() {
        return Err(SapError::Shape(format!(
            "sdc on {} and {} columns with {} assignments",
            h.ncols(),
            phi.ncols(),
            clusters.assignments.len()
        )));
    }
    let mut original = 0.0;
    let mut latent = 0.0;
    for i in 0..h.ncols() {
        let c = clusters.representative_of(i);
        original += column_sad(h, i, c)?;
        latent += column_sad(phi, i, c)?;
    }
    let inv = 1.0 / clusters.n_clusters as f64;
    Ok(inv * original - inv * latent)
}

pub fn sdc_loss(h: &UnfoldedMatrix, phi_h: &UnfoldedMatrix, cfg: &DictConfig) -> Result<f64> {
    let clusters = SdcClusters::compute(h.values(), cfg.sdc_clusters, cfg.seed)?;
    sdc_loss_with(h.values(), phi_h.values(), &clusters)
}

/// Gradient of `−(1/C) Σ SAD(φ_i, φ_c)` with respect to the latent columns.
fn sdc_latent_gradient(phi: &DMatrix<f64>, clusters: &SdcClusters) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(phi.nrows(), phi.ncols());
    let scale = -1.0 / clusters.n_clusters as f64;
    for i in 0..phi.ncols() {
        let c = clusters.representative_of(i);
        if c == i {
            continue;
        }
        let a = phi.column(i);
        let b = phi.column(c);
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let cos = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
        let dtheta = -1.0 / (1.0 - cos * cos).max(1e-12).sqrt();
        let ga = (b / (na * nb) - a * (cos / (na * na))) * (scale * dtheta);
        let gb = (a / (na * nb) - b * (cos / (nb * nb))) * (scale * dtheta);
        let mut col = grad.column_mut(i);
        col += ga;
        let mut col = grad.column_mut(c);
        col += gb;
    }
    grad
}

fn linear_ae_latent(x: &UnfoldedMatrix, cfg: &DictConfig) -> Result<LatentHsi> {
    let bands = x.rows();
    let dim = cfg.latent_dim;
    let (xc, mean) = centered(x.values());
    let n = xc.ncols();
    let clusters = if cfg.sdc_weight > 0.0 {
        Some(SdcClusters::compute(x.values(), cfg.sdc_clusters, cfg.seed)?)
    } else {
        None
    };

    // orthonormal rows from a seeded Gaussian draw; decoder starts as its transpose
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = DMatrix::from_fn(bands, dim, |_, _| StandardNormal.sample(&mut rng));
    let q = gauss.qr().q();
    let mut encoder = q.transpose();
    let mut decoder = q;

    let mse_scale = 1.0 / (bands * n) as f64;
    let loss_of = |enc: &DMatrix<f64>, dec: &DMatrix<f64>| -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
        let z = enc * &xc;
        let resid = dec * &z - &xc;
        let mut loss = resid.norm_squared() * mse_scale;
        if let Some(cl) = &clusters {
            loss += cfg.sdc_weight * sdc_loss_with(x.values(), &z, cl)?;
        }
        Ok((loss, z, resid))
    };

    let mut history = Vec::with_capacity(AE_STEPS + 1);
    for _ in 0..AE_STEPS {
        let (loss, z, resid) = loss_of(&encoder, &decoder)?;
        history.push(loss);
        let grad_dec = &resid * z.transpose() * (2.0 * mse_scale);
        let mut grad_z = decoder.transpose() * &resid * (2.0 * mse_scale);
        if let Some(cl) = &clusters {
            grad_z += sdc_latent_gradient(&z, cl) * cfg.sdc_weight;
        }
        let grad_enc = grad_z * xc.transpose();
        decoder -= grad_dec * AE_STEP_SIZE;
        encoder -= grad_enc * AE_STEP_SIZE;
        if encoder.iter().chain(decoder.iter()).any(|v| !v.is_finite()) {
            return Err(SapError::Numerical("linear autoencoder diverged".into()));
        }
    }
    let (final_loss, z, _) = loss_of(&encoder, &decoder)?;
    history.push(final_loss);

    Ok(LatentHsi {
        matrix: UnfoldedMatrix::new(z, x.origin_height(), x.origin_width())?,
        encoder,
        decoder,
        mean,
        loss_history: history,
    })
}

/// Hard k-means assignment plus the soft probability of the assigned cluster.
#[derive(Debug, Clone)]
pub struct ClusterProbabilities {
    pub assignments: Vec<usize>,
    pub probs: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

/// Softmax over clusters of `−‖x − center_k‖² / temperature`, as a full
/// `n_samples × k` row-stochastic table.
pub fn soft_assignment(samples: &DMatrix<f64>, centers: &[Vec<f64>], temperature: f64) -> Vec<Vec<f64>> {
    samples
        .column_iter()
        .map(|col| {
            let logits: Vec<f64> = centers
                .iter()
                .map(|c| -col.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / temperature)
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect()
}

pub fn cluster_probabilities(phi_h: &LatentHsi, cfg: &DictConfig) -> Result<ClusterProbabilities> {
    cfg.validate()?;
    let km = kmeans_columns(phi_h.values(), cfg.n_clusters, cfg.seed)?;
    let table = soft_assignment(phi_h.values(), &km.centers, cfg.temperature);
    let probs = table.iter().zip(&km.assignments).map(|(row, &a)| row[a]).collect();
    Ok(ClusterProbabilities { assignments: km.assignments, probs, centers: km.centers })
}

/// Linear-interpolation quantile of an unsorted sample.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundDictionary {
    /// `dim × nb`, one atom per column.
    pub atoms: DMatrix<f64>,
    pub atom_pixel_ids: Vec<usize>,
    pub atom_clusters: Vec<usize>,
    pub excluded_cluster: Option<usize>,
}

impl BackgroundDictionary {
    pub fn nb(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }
}

pub fn dual_purify(
    phi_h: &LatentHsi,
    assignments: &[usize],
    probs: &[f64],
    cfg: &DictConfig,
) -> Result<BackgroundDictionary> {
    let n = phi_h.values().ncols();
    if assignments.len() != n || probs.len() != n {
        return Err(SapError::Shape(format!(
            "{} assignments and {} probabilities for {n} pixels",
            assignments.len(),
            probs.len()
        )));
    }
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (p, &a) in assignments.iter().enumerate() {
        members[a].push(p);
    }
    let non_empty: Vec<usize> = (0..k).filter(|&c| !members[c].is_empty()).collect();
    if non_empty.len() < 2 {
        return Err(SapError::InvalidArgument("dual purification needs at least 2 non-empty clusters".into()));
    }
    // smallest cluster, lowest id on ties
    let excluded = *non_empty.iter().min_by_key(|&&c| (members[c].len(), c)).expect("non-empty");

    let mut keep = vec![false; n];
    for &c in non_empty.iter().filter(|&&c| c != excluded) {
        let cluster_probs: Vec<f64> = members[c].iter().map(|&p| probs[p]).collect();
        let cut = quantile(&cluster_probs, cfg.drop_quantile);
        for &p in &members[c] {
            keep[p] = probs[p] >= cut;
        }
    }
    let mut survivors: Vec<usize> = (0..n).filter(|&p| keep[p]).collect();
    if survivors.is_empty() {
        return Err(SapError::Empty("purification removed every dictionary atom".into()));
    }
    if let Some(cap) = cfg.max_atoms {
        if survivors.len() > cap {
            let len = survivors.len();
            survivors = (0..cap).map(|i| survivors[i * len / cap]).collect();
        }
    }
    let values = phi_h.values();
    let atoms = DMatrix::from_fn(values.nrows(), survivors.len(), |r, c| values[(r, survivors[c])]);
    Ok(BackgroundDictionary {
        atoms,
        atom_clusters: survivors.iter().map(|&p| assignments[p]).collect(),
        atom_pixel_ids: survivors,
        excluded_cluster: Some(excluded),
    })
}

/// Latent extraction, clustering and dual purification in one call.
pub fn build_dictionary(h: &HsiCube, cfg: &DictConfig) -> Result<(LatentHsi, BackgroundDictionary)> {
    let latent = extract_latent(h, cfg)?;
    let cp = cluster_probabilities(&latent, cfg)?;
    let dict = dual_purify(&latent, &cp.assignments, &cp.probs, cfg)?;
    Ok((latent, dict))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DictionaryHeader {
    pub dim: usize,
    pub nb: usize,
    pub pixel_ids: Vec<usize>,
    #[serde(default)]
    pub clusters: Vec<usize>,
    #[serde(default)]
    pub excluded_cluster: Option<usize>,
    #[serde(default = "f32_tag")]
    pub dtype: String,
    /// Latent cube container the atoms were taken from, relative to the header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<String>,
}

fn f32_tag() -> String {
    "f32".into()
}

/// `<name>.dict.json` and `<name>.dict.raw` for a dictionary base path.
pub fn dictionary_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let s = path.as_ref().to_string_lossy().to_string();
    let base = s
        .strip_suffix(".dict.json")
        .or_else(|| s.strip_suffix(".dict.raw"))
        .unwrap_or(&s)
        .to_string();
    (PathBuf::from(format!("{base}.dict.json")), PathBuf::from(format!("{base}.dict.raw")))
}

pub fn save_dictionary(dict: &BackgroundDictionary, latent: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    let (hdr, raw) = dictionary_paths(path);
    let header = DictionaryHeader {
        dim: dict.dim(),
        nb: dict.nb(),
        pixel_ids: dict.atom_pixel_ids.clone(),
        clusters: dict.atom_clusters.clone(),
        excluded_cluster: dict.excluded_cluster,
        dtype: f32_tag(),
        latent: latent.map(str::to_string),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&hdr, text).map_err(|e| SapError::io(&hdr, e))?;
    fs::write(&raw, encode_f32_le(dict.atoms.as_slice())).map_err(|e| SapError::io(&raw, e))?;
    Ok(())
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<(BackgroundDictionary, DictionaryHeader)> {
    let (hdr, raw) = dictionary_paths(path);
    let text = fs::read_to_string(&hdr).map_err(|e| SapError::io(&hdr, e))?;
    let header: DictionaryHeader = serde_json::from_str(&text)
        .map_err(|e| SapError::Header { path: hdr.clone(), msg: e.to_string() })?;
    if header.pixel_ids.len() != header.nb || header.dim == 0 || header.nb == 0 {
        return Err(SapError::Header { path: hdr, msg: "inconsistent dim/nb/pixel_ids".into() });
    }
    let bytes = fs::read(&raw).map_err(|e| SapError::io(&raw, e))?;
    let values = decode_f32_le(&bytes, header.dim * header.nb)?;
    let clusters = if header.clusters.len() == header.nb { header.clusters.clone() } else { vec![0; header.nb] };
    let dict = BackgroundDictionary {
        atoms: DMatrix::from_vec(header.dim, header.nb, values),
        atom_pixel_ids: header.pixel_ids.clone(),
        atom_clusters: clusters,
        excluded_cluster: header.excluded_cluster,
    };
    Ok((dict, header))
}
