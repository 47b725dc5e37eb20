//! Cube feature extractors: the interchange-defined compact CNN and a
//! training-free random convolution bank.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::weights::CnnWeights;
use crate::error::{Result, SapError};

/// A `channels × size × size` cube, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Cube {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(SapError::LengthMismatch { expected: channels * height * width, found: data.len() });
        }
        Ok(Self { channels, height, width, data })
    }

    /// Cuts the `size × size` window at `(top, left)` out of an unfolded
    /// `channels × (height·width)` matrix.
    pub fn from_unfolded(z: &DMatrix<f64>, grid_width: usize, top: usize, left: usize, size: usize) -> Self {
        let channels = z.nrows();
        let mut data = Vec::with_capacity(channels * size * size);
        for c in 0..channels {
            for i in 0..size {
                for j in 0..size {
                    data.push(z[(c, (top + i) * grid_width + left + j)]);
                }
            }
        }
        Self { channels, height: size, width: size, data }
    }
}

pub trait FeatureExtractor: Send + Sync {
    fn input_channels(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn extract(&self, cube: &Cube) -> Result<Vec<f64>>;
}

/// im2col for a `k × k` convolution with the given zero padding and stride 1.
/// Returns a `(channels·k·k) × (out_h·out_w)` matrix.
fn im2col(cube: &Cube, k: usize, pad: usize) -> (DMatrix<f64>, usize, usize) {
    let out_h = cube.height + 2 * pad + 1 - k;
    let out_w = cube.width + 2 * pad + 1 - k;
    let rows = cube.channels * k * k;
    let mut cols = DMatrix::zeros(rows, out_h * out_w);
    for oi in 0..out_h {
        for oj in 0..out_w {
            let col = oi * out_w + oj;
            for c in 0..cube.channels {
                for di in 0..k {
                    let ii = (oi + di) as isize - pad as isize;
                    if ii < 0 || ii >= cube.height as isize {
                        continue;
                    }
                    for dj in 0..k {
                        let jj = (oj + dj) as isize - pad as isize;
                        if jj < 0 || jj >= cube.width as isize {
                            continue;
                        }
                        cols[(c * k * k + di * k + dj, col)] =
                            cube.data[c * cube.height * cube.width + ii as usize * cube.width + jj as usize];
                    }
                }
            }
        }
    }
    (cols, out_h, out_w)
}

/// Seeded random 3×3 convolution bank → ReLU → global average pool.
#[derive(Debug, Clone)]
pub struct FallbackExtractor {
    channels: usize,
    /// `features × (channels·9)`.
    filters: DMatrix<f64>,
}

impl FallbackExtractor {
    pub fn new(channels: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = (channels * 9) as f64;
        let normal = Normal::new(0.0, fan_in.sqrt().recip()).expect("valid std");
        let filters = DMatrix::from_fn(features, channels * 9, |_, _| normal.sample(&mut rng));
        Self { channels, filters }
    }
}

impl FeatureExtractor for FallbackExtractor {
    fn input_channels(&self) -> usize {
        self.channels
    }

    fn feature_dim(&self) -> usize {
        self.filters.nrows()
    }

    fn extract(&self, cube: &Cube) -> Result<Vec<f64>> {
        if cube.channels != self.channels {
            return Err(SapError::Shape(format!("extractor takes {} channels, cube has {}", self.channels, cube.channels)));
        }
        if cube.height < 3 || cube.width < 3 {
            return Err(SapError::Shape("random convolution bank needs cubes of at least 3x3".into()));
        }
        let (cols, _, _) = im2col(cube, 3, 0);
        let response = &self.filters * cols;
        let n = response.ncols() as f64;
        Ok(response.row_iter().map(|r| r.iter().map(|v| v.max(0.0)).sum::<f64>() / n).collect())
    }
}

/// Forward pass of the interchange-defined compact network:
/// per block `conv(k, same padding) → channel norm → ReLU → 2×2 max-pool`,
/// then global average pooling.
#[derive(Debug, Clone)]
pub struct CnnExtractor {
    weights: CnnWeights,
    /// Per block: conv weight as `out × (in·k·k)`.
    kernels: Vec<DMatrix<f64>>,
}

impl CnnExtractor {
    pub fn new(weights: CnnWeights) -> Self {
        let kernels = weights
            .blocks
            .iter()
            .map(|b| {
                let s = &b.spec;
                DMatrix::from_row_slice(s.out_ch, s.in_ch * s.kernel * s.kernel, &b.conv_weight)
            })
            .collect();
        Self { weights, kernels }
    }

    pub fn weights(&self) -> &CnnWeights {
        &self.weights
    }
}

fn max_pool2(cube: &Cube) -> Cube {
    if cube.height < 2 || cube.width < 2 {
        return cube.clone();
    }
    let (h, w) = (cube.height / 2, cube.width / 2);
    let mut data = Vec::with_capacity(cube.channels * h * w);
    for c in 0..cube.channels {
        let base = c * cube.height * cube.width;
        for i in 0..h {
            for j in 0..w {
                let at = |di: usize, dj: usize| cube.data[base + (2 * i + di) * cube.width + 2 * j + dj];
                data.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    Cube { channels: cube.channels, height: h, width: w, data }
}

impl FeatureExtractor for CnnExtractor {
    fn input_channels(&self) -> usize {
        self.weights.input_bands
    }

    fn feature_dim(&self) -> usize {
        self.weights.feature_dim
    }

    fn extract(&self, cube: &Cube) -> Result<Vec<f64>> {
        if cube.channels != self.weights.input_bands {
            return Err(SapError::Weights(format!(
                "network takes {} bands, cube has {}",
                self.weights.input_bands, cube.channels
            )));
        }
        let eps = self.weights.norm_eps;
        let mut x = cube.clone();
        for (block, kernel) in self.weights.blocks.iter().zip(&self.kernels) {
            let k = block.spec.kernel;
            let (cols, oh, ow) = im2col(&x, k, k / 2);
            let mut y = kernel * cols;
            for (o, mut row) in y.row_iter_mut().enumerate() {
                let scale = block.norm_weight[o] / (block.running_var[o] + eps).sqrt();
                let shift = block.norm_bias[o] - block.running_mean[o] * scale;
                let bias = block.conv_bias[o];
                for v in row.iter_mut() {
                    *v = ((*v + bias) * scale + shift).max(0.0);
                }
            }
            // y is out × (oh·ow); row-major transpose gives channel-major data
            let data = y.transpose().as_slice().to_vec();
            x = max_pool2(&Cube { channels: block.spec.out_ch, height: oh, width: ow, data });
        }
        let plane = (x.height * x.width) as f64;
        Ok(x.data.chunks(x.height * x.width).map(|c| c.iter().sum::<f64>() / plane).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::weights::{expected_params, BlockSpec, WeightsDescriptor, BLOCK_TYPE};
    use rand::Rng;

    fn one_block_identity() -> CnnWeights {
        let blocks = vec![BlockSpec { kind: BLOCK_TYPE.into(), in_ch: 1, out_ch: 1, kernel: 3 }];
        let desc = WeightsDescriptor {
            version: 1,
            input_bands: 1,
            feature_dim: 1,
            norm_eps: 0.0,
            param_order: expected_params(&blocks),
            blocks,
        };
        // centre tap 1, bias 0, norm weight 1, bias 0, mean 0, var 1
        let mut payload = vec![0.0; 9];
        payload[4] = 1.0;
        payload.extend([0.0, 1.0, 0.0, 0.0, 1.0]);
        CnnWeights::from_parts(&desc, &payload).unwrap()
    }

    #[test]
    fn one_block_network_matches_hand_computation() {
        #[rustfmt::skip]
        let img = vec![
            1.0, -2.0,  3.0,  0.5,
            -1.0, 0.0, -4.0,  2.0,
            0.25, 6.0, -1.0, -1.0,
            -3.0, 1.5, -2.0, -0.5,
        ];
        let cube = Cube::new(1, 4, 4, img).unwrap();
        let f = CnnExtractor::new(one_block_identity()).extract(&cube).unwrap();
        // ReLU then 2×2 max-pool: [[1, 3], [6, 0]] → mean 2.5
        assert_eq!(f, vec![2.5]);
    }

    #[test]
    fn conv_uses_zero_padding_and_kernel_orientation() {
        let mut w = one_block_identity();
        // tap at (di, dj) = (0, 1): output(i, j) = input(i − 1, j)
        w.blocks[0].conv_weight = vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let cube = Cube::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // shifted down: [[0, 0], [1, 2]] → pool max 2 → mean 2
        assert_eq!(CnnExtractor::new(w).extract(&cube).unwrap(), vec![2.0]);
    }

    #[test]
    fn fallback_is_deterministic_and_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cube = Cube::new(4, 8, 8, (0..256).map(|_| rng.random::<f64>()).collect()).unwrap();
        let a = FallbackExtractor::new(4, 16, 9);
        let b = FallbackExtractor::new(4, 16, 9);
        let fa = a.extract(&cube).unwrap();
        assert_eq!(fa, b.extract(&cube).unwrap());
        assert_eq!(fa, a.extract(&cube.clone()).unwrap());
        assert_eq!(fa.len(), 16);
        assert!(fa.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let cube = Cube::new(2, 4, 4, vec![0.0; 32]).unwrap();
        assert!(FallbackExtractor::new(3, 4, 0).extract(&cube).is_err());
        assert!(matches!(
            CnnExtractor::new(one_block_identity()).extract(&cube),
            Err(SapError::Weights(_))
        ));
    }

    #[test]
    fn cube_window_reads_row_major_pixels() {
        let z = DMatrix::from_fn(2, 12, |r, c| (r * 100 + c) as f64);
        let cube = Cube::from_unfolded(&z, 4, 1, 2, 2);
        assert_eq!(cube.data, vec![6.0, 7.0, 10.0, 11.0, 106.0, 107.0, 110.0, 111.0]);
    }
}
