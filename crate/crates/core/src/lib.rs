//! Hyperspectral anomaly detection with a low-rank representation model,
//! a dual-purified background dictionary and a self-supervised anomaly prior
//! plugged into an ADMM solver.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionary;
pub mod error;
pub mod fixture;
pub mod hsi;
pub mod metrics;
pub mod pipeline;
pub mod prior;
pub mod pseudo_anomaly;
pub mod solver;
pub mod spectral;

pub use error::{Result, SapError};
pub use hsi::{fold, unfold, HsiCube, UnfoldedMatrix};
