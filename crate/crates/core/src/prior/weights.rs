//! CnnWeights interchange format.
//!
//! A `.sapw` file is one line of UTF-8 JSON (the descriptor) terminated by
//! `\n`, followed by the little-endian `f32` parameters in `param_order`.
//! Convolution weights use `[out_ch, in_ch, k, k]` row-major layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::hsi::{decode_f32_le, encode_f32_le};

pub const BLOCK_TYPE: &str = "conv_norm_relu_pool";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    #[serde(rename = "type")]
    pub kind: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsDescriptor {
    pub version: u32,
    pub input_bands: usize,
    pub feature_dim: usize,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    pub blocks: Vec<BlockSpec>,
    pub param_order: Vec<ParamSpec>,
}

fn default_eps() -> f64 {
    DEFAULT_NORM_EPS
}

/// Parameters of one convolution block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub spec: BlockSpec,
    /// `[out, in, k, k]`.
    pub conv_weight: Vec<f64>,
    pub conv_bias: Vec<f64>,
    pub norm_weight: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnWeights {
    pub input_bands: usize,
    pub feature_dim: usize,
    pub norm_eps: f64,
    pub blocks: Vec<BlockParams>,
}

/// Canonical parameter list implied by a block list.
pub fn expected_params(blocks: &[BlockSpec]) -> Vec<ParamSpec> {
    blocks
        .iter()
        .enumerate()
        .flat_map(|(i, b)| {
            let p = |suffix: &str, shape: Vec<usize>| ParamSpec { name: format!("blocks.{i}.{suffix}"), shape };
            [
                p("conv.weight", vec![b.out_ch, b.in_ch, b.kernel, b.kernel]),
                p("conv.bias", vec![b.out_ch]),
                p("norm.weight", vec![b.out_ch]),
                p("norm.bias", vec![b.out_ch]),
                p("norm.running_mean", vec![b.out_ch]),
                p("norm.running_var", vec![b.out_ch]),
            ]
        })
        .collect()
}

impl WeightsDescriptor {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SapError::Weights(msg));
        if self.version != FORMAT_VERSION {
            return fail(format!("unsupported version {}", self.version));
        }
        if self.blocks.is_empty() {
            return fail("no blocks declared".into());
        }
        if self.blocks[0].in_ch != self.input_bands {
            return fail(format!("first block takes {} channels, input has {}", self.blocks[0].in_ch, self.input_bands));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kind != BLOCK_TYPE {
                return fail(format!("block {i}: unsupported type {:?}", b.kind));
            }
            if b.kernel % 2 == 0 || b.kernel == 0 {
                return fail(format!("block {i}: kernel {} must be odd", b.kernel));
            }
            if i > 0 && self.blocks[i - 1].out_ch != b.in_ch {
                return fail(format!("block {i}: expects {} channels, previous block emits {}", b.in_ch, self.blocks[i - 1].out_ch));
            }
        }
        let last = self.blocks.last().expect("non-empty").out_ch;
        if last != self.feature_dim {
            return fail(format!("feature_dim {} but last block emits {last}", self.feature_dim));
        }
        if self.param_order != expected_params(&self.blocks) {
            return fail("param_order does not match the block list".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.param_order.iter().map(ParamSpec::len).sum()
    }
}

impl CnnWeights {
    pub fn descriptor(&self) -> WeightsDescriptor {
        let blocks: Vec<BlockSpec> = self.blocks.iter().map(|b| b.spec.clone()).collect();
        WeightsDescriptor {
            version: FORMAT_VERSION,
            input_bands: self.input_bands,
            feature_dim: self.feature_dim,
            norm_eps: self.norm_eps,
            param_order: expected_params(&blocks),
            blocks,
        }
    }

    pub fn from_parts(desc: &WeightsDescriptor, payload: &[f64]) -> Result<Self> {
        desc.validate()?;
        let expected = desc.param_count();
        if payload.len() != expected {
            return Err(SapError::Weights(format!(
                "payload holds {} parameters, descriptor declares {expected}",
                payload.len()
            )));
        }
        let mut offset = 0;
        let mut take = |n: usize| {
            let s = payload[offset..offset + n].to_vec();
            offset += n;
            s
        };
        let blocks = desc
            .blocks
            .iter()
            .map(|b| BlockParams {
                spec: b.clone(),
                conv_weight: take(b.out_ch * b.in_ch * b.kernel * b.kernel),
                conv_bias: take(b.out_ch),
                norm_weight: take(b.out_ch),
                norm_bias: take(b.out_ch),
                running_mean: take(b.out_ch),
                running_var: take(b.out_ch),
            })
            .collect();
        Ok(Self { input_bands: desc.input_bands, feature_dim: desc.feature_dim, norm_eps: desc.norm_eps, blocks })
    }

    pub fn payload(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| {
                b.conv_weight
                    .iter()
                    .chain(&b.conv_bias)
                    .chain(&b.norm_weight)
                    .chain(&b.norm_bias)
                    .chain(&b.running_mean)
                    .chain(&b.running_var)
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec(&self.descriptor()).expect("descriptor serializes");
        bytes.push(b'\n');
        bytes.extend(encode_f32_le(&self.payload()));
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| SapError::Weights("missing descriptor line".into()))?;
        let desc: WeightsDescriptor = serde_json::from_slice(&bytes[..split])
            .map_err(|e| SapError::Weights(format!("descriptor: {e}")))?;
        desc.validate()?;
        let payload = decode_f32_le(&bytes[split + 1..], desc.param_count())
            .map_err(|e| SapError::Weights(format!("payload: {e}")))?;
        Self::from_parts(&desc, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| SapError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| SapError::io(path, e))
    }
}
