//! Spectral angle and k-means clustering primitives.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SapError};

pub const KMEANS_MAX_ITER: usize = 300;

/// Spectral angle distance `arccos(uᵀv / (‖u‖‖v‖))` in radians.
pub fn sad(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(SapError::Shape(format!("sad on lengths {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(SapError::ZeroNorm);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0).acos())
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Inertia after each assignment pass.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centers.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn kmeans(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let n = samples.len();
    if n == 0 {
        return Err(SapError::Empty("k-means needs at least one sample".into()));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(SapError::Shape("k-means samples have unequal lengths".into()));
    }
    let flat: Vec<f64> = samples.iter().flatten().copied().collect();
    kmeans_flat(&flat, n, dim, k, seed)
}

/// Clusters the columns of `m` (one sample per column).
pub fn kmeans_columns(m: &DMatrix<f64>, k: usize, seed: u64) -> Result<KMeans> {
    if m.ncols() == 0 {
        return Err(SapError::Empty("k-means needs at least one sample".into()));
    }
    // column-major storage is already sample-contiguous
    kmeans_flat(m.as_slice(), m.ncols(), m.nrows(), k, seed)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(sample: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(sample, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_flat(flat: &[f64], n: usize, dim: usize, k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > n {
        return Err(SapError::InvalidArgument(format!("k = {k} with {n} samples")));
    }
    let sample = |i: usize| &flat[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(sample(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(sample(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = sample(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(sample(i), &c));
        }
        centers.push(c);
    }

    let mut assignments = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(sample(i), &centers);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dists[i] = d;
            inertia += d;
        }
        inertia_history.push(inertia);
        if !changed {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(sample(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centers[c] = sums[c].iter().map(|s| s * inv).collect();
            } else {
                // empty cluster: move it onto the worst-fit sample
                let far = (0..n).max_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap_or(0);
                centers[c] = sample(far).to_vec();
                dists[far] = 0.0;
            }
        }
    }

    Ok(KMeans { assignments, centers, inertia_history, iterations })
}
