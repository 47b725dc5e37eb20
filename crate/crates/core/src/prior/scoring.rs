use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cubes::CubePosition;
use crate::error::{Result, SapError};

pub const OTSU_BINS: usize = 256;

/// Per-pixel score map, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
    pub normalized: bool,
}

impl DetectionMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != height * width {
            return Err(SapError::LengthMismatch { expected: height * width, found: scores.len() });
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(SapError::NonFinite(i));
        }
        Ok(Self { height, width, scores, normalized: false })
    }

    /// Min-max rescale to `[0, 1]`; a constant map becomes all zeros.
    pub fn normalize(mut self) -> Self {
        let lo = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for v in &mut self.scores {
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
        self.normalized = true;
        self
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidedMap {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl GuidedMap {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    #[default]
    Otsu,
    MeanPlusKSigma,
}

impl std::str::FromStr for ThresholdMethod {
    type Err = SapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "otsu" => Ok(Self::Otsu),
            "mean_plus_k_sigma" => Ok(Self::MeanPlusKSigma),
            other => Err(SapError::InvalidArgument(format!("unknown threshold method {other:?}"))),
        }
    }
}

/// `(f − μ)ᵀ (Γ + εI)⁻¹ (f − μ)` for every row of the `K × F` feature matrix,
/// with `ε = eps_rel · tr(Γ) / F`.
pub fn mahalanobis_scores(features: &DMatrix<f64>, eps_rel: f64) -> Result<Vec<f64>> {
    let (k, f) = features.shape();
    if k < 2 {
        return Err(SapError::InvalidArgument(format!("need at least 2 feature rows, got {k}")));
    }
    if !(eps_rel > 0.0) {
        return Err(SapError::InvalidArgument("covariance ridge must be positive".into()));
    }
    let mu = features.row_mean();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mu;
    }
    let mut gamma = centered.transpose() * &centered / (k - 1) as f64;
    let trace = gamma.trace();
    if !(trace > 0.0) {
        return Ok(vec![0.0; k]);
    }
    let eps = eps_rel * trace / f as f64;
    for i in 0..f {
        gamma[(i, i)] += eps;
    }
    let chol = Cholesky::new(gamma).ok_or_else(|| SapError::Numerical("regularized covariance is not positive definite".into()))?;
    Ok(centered
        .row_iter()
        .map(|r| {
            let x: DVector<f64> = r.transpose();
            x.dot(&chol.solve(&x)).max(0.0)
        })
        .collect())
}

/// Unnormalized Gaussian-weighted average of the scores of all cubes covering
/// each pixel. Weights are centred on each cube.
pub fn propagate_raw(
    scores: &[f64],
    positions: &[CubePosition],
    size: usize,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<Vec<f64>> {
    if scores.len() != positions.len() {
        return Err(SapError::LengthMismatch { expected: positions.len(), found: scores.len() });
    }
    if !(sigma > 0.0) {
        return Err(SapError::InvalidArgument("kernel sigma must be positive".into()));
    }
    let mut num = vec![0.0; height * width];
    let mut den = vec![0.0; height * width];
    let half = (size as f64 - 1.0) / 2.0;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (&s, p) in scores.iter().zip(positions) {
        if p.top + size > height || p.left + size > width {
            return Err(SapError::Shape(format!("cube at ({}, {}) leaves the grid", p.top, p.left)));
        }
        let (cr, cc) = (p.top as f64 + half, p.left as f64 + half);
        for r in p.top..p.top + size {
            for c in p.left..p.left + size {
                let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                let g = (-d2 * inv).exp();
                num[r * width + c] += s * g;
                den[r * width + c] += g;
            }
        }
    }
    num.iter()
        .zip(&den)
        .enumerate()
        .map(|(i, (&n, &d))| {
            if d > 0.0 {
                Ok(n / d)
            } else {
                Err(SapError::Shape(format!("pixel {i} is not covered by any cube")))
            }
        })
        .collect()
}

pub fn propagate_scores(
    scores: &[f64],
    positions: &[CubePosition],
    size: usize,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<DetectionMap> {
    let raw = propagate_raw(scores, positions, size, height, width, sigma)?;
    Ok(DetectionMap::new(height, width, raw)?.normalize())
}

fn otsu_bin(v: f64) -> usize {
    ((v * OTSU_BINS as f64).floor().max(0.0) as usize).min(OTSU_BINS - 1)
}

/// Otsu's threshold over a 256-bin histogram of a `[0, 1]` map. Returns the
/// last bin of the lower class, or `None` when no split separates anything.
pub fn otsu_bin_threshold(values: &[f64]) -> Option<usize> {
    let mut hist = [0usize; OTSU_BINS];
    for &v in values {
        hist[otsu_bin(v)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for (t, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let between = w0 * w1 * (sum0 / w0 - (sum_all - sum0) / w1).powi(2);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t, between));
        }
    }
    best.filter(|&(_, b)| b > 0.0).map(|(t, _)| t)
}

pub fn adaptive_threshold(map: &DetectionMap, method: ThresholdMethod, k: f64) -> Result<GuidedMap> {
    if !map.normalized {
        return Err(SapError::InvalidArgument("thresholding needs a normalized map".into()));
    }
    let mask = match method {
        ThresholdMethod::Otsu => match otsu_bin_threshold(&map.scores) {
            Some(t) => map.scores.iter().map(|&v| otsu_bin(v) > t).collect(),
            None => vec![false; map.scores.len()],
        },
        ThresholdMethod::MeanPlusKSigma => {
            let n = map.scores.len() as f64;
            let mean = map.scores.iter().sum::<f64>() / n;
            let std = (map.scores.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std > 0.0 {
                map.scores.iter().map(|&v| v > mean + k * std).collect()
            } else {
                vec![false; map.scores.len()]
            }
        }
    };
    Ok(GuidedMap { height: map.height, width: map.width, mask })
}

/// Zeroes every column of `z` whose pixel is off in the guided map.
pub fn apply_guided_map(g: &GuidedMap, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != g.mask.len() {
        return Err(SapError::Shape(format!("guided map has {} pixels, Z has {}", g.mask.len(), z.ncols())));
    }
    let mut a = z.clone();
    for (mut col, &on) in a.column_iter_mut().zip(&g.mask) {
        if !on {
            col.fill(0.0);
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn whitened_rows_reduce_to_euclidean() {
        // ±e_i rows: mean 0, sample covariance = I·(2/(K−1)) scaled below
        let k = 6;
        let f = 3;
        let s = ((k - 1) as f64 / 2.0).sqrt();
        let mut m = DMatrix::zeros(k, f);
        for i in 0..f {
            m[(2 * i, i)] = s;
            m[(2 * i + 1, i)] = -s;
        }
        let scores = mahalanobis_scores(&m, 1e-12).unwrap();
        for (i, sc) in scores.iter().enumerate() {
            assert!((sc - m.row(i).norm_squared()).abs() < 1e-8, "{sc}");
        }
    }

    #[test]
    fn identical_rows_score_zero() {
        let m = DMatrix::from_fn(5, 4, |_, c| c as f64);
        assert_eq!(mahalanobis_scores(&m, 1e-6).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn three_points_in_the_plane() {
        let m = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0]);
        // μ = (1/3, 2/3); Γ = [[1/3, −1/3], [−1/3, 4/3]]; det = 1/3
        let inv = [[4.0, 1.0], [1.0, 1.0]];
        let mu = [1.0 / 3.0, 2.0 / 3.0];
        let scores = mahalanobis_scores(&m, 1e-12).unwrap();
        for i in 0..3 {
            let d = [m[(i, 0)] - mu[0], m[(i, 1)] - mu[1]];
            let want = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
            assert!((scores[i] - want).abs() < 1e-9, "{i}: {} vs {want}", scores[i]);
        }
    }

    #[test]
    fn single_cube_gives_constant_map() {
        let pos = [CubePosition { top: 0, left: 0 }];
        let raw = propagate_raw(&[4.2], &pos, 8, 8, 8, 4.0).unwrap();
        assert!(raw.iter().all(|&v| (v - 4.2).abs() < 1e-12));
        let map = propagate_scores(&[4.2], &pos, 8, 8, 8, 4.0).unwrap();
        assert!(map.scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disjoint_cubes_keep_order() {
        let pos = [CubePosition { top: 0, left: 0 }, CubePosition { top: 0, left: 4 }];
        let map = propagate_scores(&[0.0, 10.0], &pos, 4, 4, 8, 2.0).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!(map.get(r, c + 4) > map.get(r, c));
            }
        }
    }

    #[test]
    fn half_overlap_matches_two_term_average() {
        let pos = [CubePosition { top: 0, left: 0 }, CubePosition { top: 0, left: 8 }];
        let raw = propagate_raw(&[1.0, 3.0], &pos, 16, 16, 24, 8.0).unwrap();
        let g = |r: f64, c: f64, cr: f64, cc: f64| (-((r - cr).powi(2) + (c - cc).powi(2)) / 128.0).exp();
        for r in 0..16 {
            for c in 8..16 {
                let (rf, cf) = (r as f64, c as f64);
                let (g0, g1) = (g(rf, cf, 7.5, 7.5), g(rf, cf, 7.5, 15.5));
                let want = (g0 + 3.0 * g1) / (g0 + g1);
                assert!((raw[r * 24 + c] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn otsu_splits_bimodal_map() {
        let mut scores = vec![0.1; 900];
        scores.extend(vec![0.9; 100]);
        let map = DetectionMap { height: 25, width: 40, scores, normalized: true };
        let t = otsu_bin_threshold(&map.scores).unwrap();
        let t_val = (t + 1) as f64 / OTSU_BINS as f64;
        assert!(t_val > 0.1 && t_val < 0.9);
        // brute-force oracle over every split of the two occupied bins
        let (b0, b1) = (otsu_bin(0.1), otsu_bin(0.9));
        assert!(t >= b0 && t < b1);
        let g = adaptive_threshold(&map, ThresholdMethod::Otsu, 0.0).unwrap();
        assert_eq!(g.count(), 100);
        assert!(g.mask[900..].iter().all(|&b| b));
    }

    #[test]
    fn constant_map_has_empty_mask() {
        for v in [0.0, 0.4, 1.0] {
            let map = DetectionMap { height: 3, width: 3, scores: vec![v; 9], normalized: true };
            for m in [ThresholdMethod::Otsu, ThresholdMethod::MeanPlusKSigma] {
                assert_eq!(adaptive_threshold(&map, m, 2.0).unwrap().count(), 0);
            }
        }
    }

    #[test]
    fn mean_plus_two_sigma_marks_gaussian_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let map = DetectionMap::new(100, 200, scores).unwrap().normalize();
        let frac = adaptive_threshold(&map, ThresholdMethod::MeanPlusKSigma, 2.0).unwrap().count() as f64 / n as f64;
        assert!((frac - 0.0228).abs() < 0.01, "{frac}");
    }

    #[test]
    fn guided_map_gates_columns() {
        let z = DMatrix::from_fn(3, 4, |r, c| (r * 4 + c + 1) as f64);
        let none = GuidedMap { height: 2, width: 2, mask: vec![false; 4] };
        assert_eq!(apply_guided_map(&none, &z).unwrap(), DMatrix::zeros(3, 4));
        let all = GuidedMap { height: 2, width: 2, mask: vec![true; 4] };
        assert_eq!(apply_guided_map(&all, &z).unwrap(), z);
        let checker = GuidedMap { height: 2, width: 2, mask: vec![true, false, false, true] };
        let a = apply_guided_map(&checker, &z).unwrap();
        for p in 0..4 {
            assert_eq!(a.column(p).iter().all(|&v| v != 0.0), checker.mask[p]);
        }
        let wrong = GuidedMap { height: 1, width: 3, mask: vec![true; 3] };
        assert!(apply_guided_map(&wrong, &z).is_err());
    }
}
