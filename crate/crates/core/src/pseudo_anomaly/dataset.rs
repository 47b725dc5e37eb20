use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GenConfig, LabeledPair, PolygonPrism};
use crate::error::{Result, SapError};
use crate::hsi::{save_hsi, HsiCube};

pub const TILE_SIZE: usize = 64;
/// Train share of the 4:1 train/validation split.
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub file: String,
    pub label: u8,
    pub split: Split,
    pub pair: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPair {
    pub id: String,
    pub source: usize,
    pub tile_row: usize,
    pub tile_col: usize,
    pub split: Split,
    pub spec: PolygonPrism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub tile_size: usize,
    pub bands: usize,
    pub config: GenConfig,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub files: Vec<ManifestFile>,
    pub pairs: Vec<ManifestPair>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SapError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| SapError::Header { path: path.to_path_buf(), msg: e.to_string() })
    }
}

/// SplitMix64 step; decorrelates per-tile seeds from the master seed.
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Tile {
    source: usize,
    row: usize,
    col: usize,
}

/// Tiles every source into non-overlapping 64×64 crops and writes one
/// clean/pseudo-anomaly pair per tile plus `manifest.json`.
pub fn emit_dataset(sources: &[HsiCube], cfg: &GenConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if sources.is_empty() {
        return Err(SapError::Empty("no source cubes".into()));
    }
    let bands = sources[0].bands();
    if sources.iter().any(|s| s.bands() != bands) {
        return Err(SapError::Shape("sources have differing band counts".into()));
    }
    cfg.validate(bands)?;
    if let Some((i, s)) = sources
        .iter()
        .enumerate()
        .find(|(_, s)| s.height() < TILE_SIZE || s.width() < TILE_SIZE)
    {
        return Err(SapError::InvalidArgument(format!(
            "source {i} is {}x{}, smaller than {TILE_SIZE}x{TILE_SIZE}",
            s.height(),
            s.width()
        )));
    }

    let tiles: Vec<Tile> = sources
        .iter()
        .enumerate()
        .flat_map(|(source, s)| {
            let (rows, cols) = (s.height() / TILE_SIZE, s.width() / TILE_SIZE);
            (0..rows).flat_map(move |row| (0..cols).map(move |col| Tile { source, row, col }))
        })
        .collect();

    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, u64::MAX)));
    let n_train = (tiles.len() as f64 * TRAIN_FRACTION).round() as usize;
    let mut split = vec![Split::Val; tiles.len()];
    for &t in &order[..n_train] {
        split[t] = Split::Train;
    }

    let pairs_dir = out_dir.join("pairs");
    fs::create_dir_all(&pairs_dir).map_err(|e| SapError::io(&pairs_dir, e))?;

    let pairs: Vec<ManifestPair> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, tile)| -> Result<ManifestPair> {
            let x = sources[tile.source].crop(tile.row * TILE_SIZE, tile.col * TILE_SIZE, TILE_SIZE, TILE_SIZE)?;
            let pair = LabeledPair::synthesize(x, mix(cfg.seed, t as u64), cfg)?;
            let id = format!("s{:04}_r{:02}_c{:02}", tile.source, tile.row, tile.col);
            save_hsi(&pair.x, pairs_dir.join(format!("{id}_x")))?;
            save_hsi(&pair.y, pairs_dir.join(format!("{id}_y")))?;
            Ok(ManifestPair {
                id,
                source: tile.source,
                tile_row: tile.row,
                tile_col: tile.col,
                split: split[t],
                spec: pair.spec,
            })
        })
        .collect::<Result<_>>()?;

    let files = pairs
        .iter()
        .flat_map(|p| {
            [(LabeledPair::LABEL_X, "x"), (LabeledPair::LABEL_Y, "y")].map(|(label, suffix)| ManifestFile {
                file: format!("pairs/{}_{suffix}.hdr.json", p.id),
                label,
                split: p.split,
                pair: p.id.clone(),
            })
        })
        .collect();

    let manifest = DatasetManifest {
        version: 1,
        tile_size: TILE_SIZE,
        bands,
        config: cfg.clone(),
        train_pairs: n_train,
        val_pairs: tiles.len() - n_train,
        files,
        pairs,
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| SapError::io(&path, e))?;
    Ok(manifest)
}
