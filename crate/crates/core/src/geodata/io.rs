//! On-disk dataset layout.
//!
//! ```text
//! <root>/dataset.json            dataset-wide settings (normalisation, h_max, generator)
//! <root>/split.json              DatasetSplit
//! <root>/<id>/image.png          8-bit RGB
//! <root>/<id>/elevation.f32      raw grid, see below
//! <root>/<id>/meta.json          resolution, origin, h_max, payload checksums
//! <root>/<id>/tx/<k>.json        TransmitterSpec
//! <root>/<id>/rem/<k>.f32        raw grid of normalised pathloss
//! ```
//!
//! Raw grids are a 16-byte header (`b"NDSM"`, `u32` height, `u32` width,
//! `u32` reserved = 0, all little-endian) followed by `height × width`
//! little-endian `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::{Grid, RgbImage};
use super::split::DatasetSplit;
use super::types::{
    ElevationMap, ElevationSource, PathlossNormalization, RadioMap, Tile, TransmitterSpec,
};
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"NDSM";
pub const RAW_HEADER_LEN: usize = 16;
pub const DATASET_FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_raw_grid(grid: &Grid<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + grid.data().len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw_grid(bytes: &[u8], origin: &Path) -> Result<Grid<f32>> {
    let malformed = |reason: &str| Error::MalformedHeader {
        path: origin.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < RAW_HEADER_LEN {
        return Err(malformed("file shorter than 16-byte header"));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(malformed("bad magic, expected NDSM"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w) = (word(4), word(8));
    let payload = &bytes[RAW_HEADER_LEN..];
    let expected = h.checked_mul(w).and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{}: header says {h}x{w} ({} bytes) but payload holds {} bytes",
            origin.display(),
            h.saturating_mul(w).saturating_mul(4),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Grid::from_vec(h, w, data)
}

pub fn write_raw_grid(path: &Path, grid: &Grid<f32>) -> Result<()> {
    write_bytes(path, &encode_raw_grid(grid))
}

pub fn read_raw_grid(path: &Path) -> Result<Grid<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw_grid(&bytes, path)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(
            image.as_raw(),
            image.width() as u32,
            image.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image {
            path: PathBuf::from("<memory>"),
            reason: e.to_string(),
        })?;
    Ok(buf)
}

pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::from_raw(h as usize, w as usize, rgb.into_raw())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileMeta {
    pub id: String,
    pub size_px: usize,
    pub resolution_m: f64,
    pub origin: [f64; 2],
    pub h_max: f32,
    pub elevation_source: ElevationSource,
    pub image_sha256: String,
    pub elevation_sha256: String,
}

/// Writes `<dir>/image.png`, `<dir>/elevation.f32` and `<dir>/meta.json`.
pub fn save_tile(dir: &Path, tile: &Tile) -> Result<()> {
    tile.validate()?;
    let png = encode_png(&tile.image)?;
    let raw = encode_raw_grid(&tile.elevation.heights);
    write_bytes(&dir.join("image.png"), &png)?;
    write_bytes(&dir.join("elevation.f32"), &raw)?;
    let meta = TileMeta {
        id: tile.id.clone(),
        size_px: tile.size_px(),
        resolution_m: tile.resolution_m,
        origin: [tile.origin.0, tile.origin.1],
        h_max: tile.elevation.h_max,
        elevation_source: tile.elevation.source,
        image_sha256: sha256_hex(&png),
        elevation_sha256: sha256_hex(&raw),
    };
    write_json(&dir.join("meta.json"), &meta)
}

pub fn load_tile_meta(dir: &Path) -> Result<TileMeta> {
    read_json(&dir.join("meta.json"))
}

/// Loads a tile directory, verifying checksums and every type invariant.
pub fn load_tile(dir: &Path) -> Result<Tile> {
    let meta = load_tile_meta(dir)?;
    let read_checked = |name: &str, expected: &str| -> Result<Vec<u8>> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != expected {
            return Err(Error::ChecksumMismatch {
                path,
                expected: expected.to_string(),
                found,
            });
        }
        Ok(bytes)
    };
    let png = read_checked("image.png", &meta.image_sha256)?;
    let raw = read_checked("elevation.f32", &meta.elevation_sha256)?;
    let image = decode_png(&png, &dir.join("image.png"))?;
    let heights = decode_raw_grid(&raw, &dir.join("elevation.f32"))?;
    if image.shape() != (meta.size_px, meta.size_px) || heights.shape() != image.shape() {
        return Err(Error::DimensionMismatch(format!(
            "tile {}: meta size {}, image {:?}, elevation {:?}",
            meta.id,
            meta.size_px,
            image.shape(),
            heights.shape()
        )));
    }
    let elevation = ElevationMap::checked(heights, meta.elevation_source, meta.h_max)?;
    Tile::new(
        meta.id,
        image,
        elevation,
        meta.resolution_m,
        (meta.origin[0], meta.origin[1]),
    )
}

pub fn save_radiomap(path: &Path, map: &RadioMap) -> Result<()> {
    write_raw_grid(path, &map.values)
}

/// The raw format carries no normalisation; the caller supplies the
/// dataset-wide one.
pub fn load_radiomap(path: &Path, normalization: PathlossNormalization) -> Result<RadioMap> {
    RadioMap::new(read_raw_grid(path)?, normalization)
}

/// Dataset-wide settings written next to the tiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub format_version: u32,
    pub normalization: PathlossNormalization,
    pub h_max: f32,
    pub tile_size_px: usize,
    pub resolution_m: f64,
    /// Parameters of whatever produced the data (free-form).
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
}

/// Handle on a dataset root.
#[derive(Clone, Debug)]
pub struct DatasetStore {
    root: PathBuf,
    info: DatasetInfo,
}

impl DatasetStore {
    pub fn create(root: impl Into<PathBuf>, info: DatasetInfo) -> Result<Self> {
        let root = root.into();
        info.normalization.validate()?;
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        write_json(&root.join("dataset.json"), &info)?;
        Ok(Self { root, info })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let info: DatasetInfo = read_json(&root.join("dataset.json"))?;
        if info.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::MalformedHeader {
                path: root.join("dataset.json"),
                reason: format!("unsupported format version {}", info.format_version),
            });
        }
        info.normalization.validate()?;
        Ok(Self { root, info })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn info(&self) -> &DatasetInfo {
        &self.info
    }

    pub fn normalization(&self) -> PathlossNormalization {
        self.info.normalization
    }

    pub fn tile_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Sorted ids of every directory holding a `meta.json`.
    pub fn tile_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if entry.path().join("meta.json").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn save_tile(&self, tile: &Tile) -> Result<()> {
        save_tile(&self.tile_dir(&tile.id), tile)
    }

    pub fn load_tile(&self, id: &str) -> Result<Tile> {
        let dir = self.tile_dir(id);
        if !dir.join("meta.json").is_file() {
            return Err(Error::MissingFile(dir.join("meta.json")));
        }
        load_tile(&dir)
    }

    pub fn save_sample(&self, id: &str, k: usize, tx: &TransmitterSpec, rem: &RadioMap) -> Result<()> {
        let dir = self.tile_dir(id);
        write_json(&dir.join("tx").join(format!("{k}.json")), tx)?;
        save_radiomap(&dir.join("rem").join(format!("{k}.f32")), rem)
    }

    /// Transmitter indices stored for a tile, ascending.
    pub fn sample_indices(&self, id: &str) -> Result<Vec<usize>> {
        let dir = self.tile_dir(id).join("tx");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ks = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(k) = name.strip_suffix(".json").and_then(|s| s.parse().ok()) {
                ks.push(k);
            }
        }
        ks.sort_unstable();
        Ok(ks)
    }

    pub fn load_transmitter(&self, id: &str, k: usize) -> Result<TransmitterSpec> {
        read_json(&self.tile_dir(id).join("tx").join(format!("{k}.json")))
    }

    pub fn load_rem(&self, id: &str, k: usize) -> Result<RadioMap> {
        load_radiomap(
            &self.tile_dir(id).join("rem").join(format!("{k}.f32")),
            self.info.normalization,
        )
    }

    pub fn write_split(&self, split: &DatasetSplit) -> Result<()> {
        write_json(&self.root.join("split.json"), split)
    }

    pub fn split(&self) -> Result<DatasetSplit> {
        let split: DatasetSplit = read_json(&self.root.join("split.json"))?;
        split.validate()?;
        Ok(split)
    }
}
