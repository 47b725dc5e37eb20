//! Hyperspectral cube data model, container I/O and the matrix views used by
//! the solver.
//!
//! Cubes are stored band-major: value `(b, i, j)` lives at
//! `b * height * width + i * width + j`. Unfolding produces a `bands × (height·width)`
//! matrix whose column `p` is the spectrum of pixel `(p / width, p % width)`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};

#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    wavelengths_nm: Option<Vec<f64>>,
}

impl HsiCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(SapError::Shape(format!(
                "cube dimensions must be positive, got {bands}x{height}x{width}"
            )));
        }
        let expected = bands * height * width;
        if data.len() != expected {
            return Err(SapError::LengthMismatch { expected, found: data.len() });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(SapError::NonFinite(idx));
        }
        Ok(Self { bands, height, width, data, wavelengths_nm: None })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(bands, height, width, vec![0.0; bands * height * width])
    }

    pub fn with_wavelengths(mut self, wavelengths_nm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.len() != self.bands {
            return Err(SapError::Shape(format!(
                "{} wavelengths for {} bands",
                wavelengths_nm.len(),
                self.bands
            )));
        }
        if wavelengths_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SapError::InvalidArgument(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        self.wavelengths_nm = Some(wavelengths_nm);
        Ok(self)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn wavelengths_nm(&self) -> Option<&[f64]> {
        self.wavelengths_nm.as_deref()
    }

    #[inline]
    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        band * self.height * self.width + row * self.width + col
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(band, row, col)]
    }

    /// Sets one entry. Non-finite values are rejected so the cube invariant holds.
    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f64) -> Result<()> {
        let idx = self.index(band, row, col);
        if !value.is_finite() {
            return Err(SapError::NonFinite(idx));
        }
        self.data[idx] = value;
        Ok(())
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[band * plane..(band + 1) * plane]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, row, col)).collect()
    }

    /// Spatial sub-cube with the given top-left corner and size.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<HsiCube> {
        if top + height > self.height || left + width > self.width {
            return Err(SapError::Shape(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.bands * height * width);
        for b in 0..self.bands {
            for i in top..top + height {
                let start = self.index(b, i, left);
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        let mut cube = HsiCube::new(self.bands, height, width, data)?;
        cube.wavelengths_nm = self.wavelengths_nm.clone();
        Ok(cube)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_hsi(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_hsi(self, path)
    }
}

/// A `rows × (origin_height·origin_width)` matrix view of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedMatrix {
    values: DMatrix<f64>,
    origin_height: usize,
    origin_width: usize,
}

impl UnfoldedMatrix {
    pub fn new(values: DMatrix<f64>, origin_height: usize, origin_width: usize) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(SapError::Shape("unfolded matrix needs at least one row".into()));
        }
        if values.ncols() != origin_height * origin_width {
            return Err(SapError::Shape(format!(
                "{} columns cannot fold into {}x{}",
                values.ncols(),
                origin_height,
                origin_width
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(SapError::NonFinite(idx));
        }
        Ok(Self { values, origin_height, origin_width })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn origin_height(&self) -> usize {
        self.origin_height
    }

    pub fn origin_width(&self) -> usize {
        self.origin_width
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

pub fn unfold(cube: &HsiCube) -> UnfoldedMatrix {
    let plane = cube.pixels();
    let values = DMatrix::from_fn(cube.bands, plane, |b, p| cube.data[b * plane + p]);
    UnfoldedMatrix { values, origin_height: cube.height, origin_width: cube.width }
}

pub fn fold(m: &UnfoldedMatrix) -> Result<HsiCube> {
    fold_matrix(&m.values, m.origin_height, m.origin_width)
}

/// Folds a raw matrix whose columns are pixels into a band-major cube.
pub fn fold_matrix(values: &DMatrix<f64>, height: usize, width: usize) -> Result<HsiCube> {
    if values.ncols() != height * width {
        return Err(SapError::Shape(format!(
            "{} columns cannot fold into {}x{}",
            values.ncols(),
            height,
            width
        )));
    }
    let bands = values.nrows();
    let plane = height * width;
    let mut data = vec![0.0; bands * plane];
    for p in 0..plane {
        for b in 0..bands {
            data[b * plane + p] = values[(b, p)];
        }
    }
    HsiCube::new(bands, height, width, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    #[default]
    GlobalMinmax,
    PerBandMinmax,
}

/// Min-max scaling into `[0, 1]`. A constant range maps to zeros.
pub fn normalize(cube: &HsiCube, mode: NormalizeMode) -> HsiCube {
    let mut out = cube.clone();
    let rescale = |values: &mut [f64]| {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for v in values.iter_mut() {
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    };
    match mode {
        NormalizeMode::GlobalMinmax => rescale(&mut out.data),
        NormalizeMode::PerBandMinmax => {
            let plane = cube.pixels();
            for chunk in out.data.chunks_mut(plane) {
                rescale(chunk);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContainerHeader {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths_nm: Option<Vec<f64>>,
}

/// Resolves `<name>`, `<name>.hdr.json` or `<name>.raw` into the header and
/// payload paths of a container.
pub fn container_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".hdr.json")
        .or_else(|| s.strip_suffix(".raw"))
        .unwrap_or(&s)
        .to_string();
    (PathBuf::from(format!("{base}.hdr.json")), PathBuf::from(format!("{base}.raw")))
}

pub fn load_hsi(path: impl AsRef<Path>) -> Result<HsiCube> {
    let (hdr_path, raw_path) = container_paths(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| SapError::io(&hdr_path, e))?;
    let header: ContainerHeader = serde_json::from_str(&text)
        .map_err(|e| SapError::Header { path: hdr_path.clone(), msg: e.to_string() })?;
    if header.dtype != "f32" {
        return Err(SapError::Header {
            path: hdr_path,
            msg: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    if header.order != "band_major" {
        return Err(SapError::Header {
            path: hdr_path,
            msg: format!("unsupported order {:?}", header.order),
        });
    }
    let bytes = fs::read(&raw_path).map_err(|e| SapError::io(&raw_path, e))?;
    let expected = header.bands * header.height * header.width;
    let data = decode_f32_le(&bytes, expected)?;
    let cube = HsiCube::new(header.bands, header.height, header.width, data)?;
    match header.wavelengths_nm {
        Some(w) => cube.with_wavelengths(w),
        None => Ok(cube),
    }
}

pub fn save_hsi(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, raw_path) = container_paths(path);
    let header = ContainerHeader {
        bands: cube.bands,
        height: cube.height,
        width: cube.width,
        dtype: "f32".into(),
        order: "band_major".into(),
        wavelengths_nm: cube.wavelengths_nm.clone(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&hdr_path, text).map_err(|e| SapError::io(&hdr_path, e))?;
    fs::write(&raw_path, encode_f32_le(&cube.data)).map_err(|e| SapError::io(&raw_path, e))?;
    Ok(())
}

pub(crate) fn decode_f32_le(bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) || bytes.len() / 4 != expected {
        return Err(SapError::LengthMismatch { expected, found: bytes.len() / 4 });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
        return Err(SapError::NonFinite(idx));
    }
    Ok(data)
}

pub(crate) fn encode_f32_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}
