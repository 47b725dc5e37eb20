use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};

/// Top-left corner of a square cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubePosition {
    pub top: usize,
    pub left: usize,
}

fn axis_offsets(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = extent - size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Corners on a `stride` grid, with the final row and column clamped to the
/// border so that every pixel is covered. Row-major order.
pub fn split_cubes(height: usize, width: usize, size: usize, stride: usize) -> Result<Vec<CubePosition>> {
    if size == 0 || stride == 0 {
        return Err(SapError::InvalidArgument("cube size and stride must be positive".into()));
    }
    if size > height.min(width) {
        return Err(SapError::InvalidArgument(format!(
            "cube size {size} exceeds the {height}x{width} grid"
        )));
    }
    let rows = axis_offsets(height, size, stride);
    let cols = axis_offsets(width, size, stride);
    Ok(rows
        .iter()
        .flat_map(|&top| cols.iter().map(move |&left| CubePosition { top, left }))
        .collect())
}
