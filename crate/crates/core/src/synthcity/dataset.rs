use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{oracle_pathloss, OracleParams};
use super::render::{render_pseudo_rgb, RenderParams};
use super::scene::{generate_scene, rasterize_scene, SceneParams};
use crate::error::{Error, Result};
use crate::geodata::{
    io::DATASET_FORMAT_VERSION, split_dataset, AntennaPattern, DatasetInfo, DatasetSplit,
    DatasetStore, PathlossNormalization, Tile, TransmitterSpec,
};

/// How random transmitters are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransmitterParams {
    pub height_m: (f64, f64),
    /// Probability that a transmitter is omnidirectional.
    pub omni_fraction: f64,
    pub g_max_db: f64,
    pub sector_theta_3db_deg: f64,
    pub sector_a_max_db: f64,
    /// Keep transmitters this far from the tile edge.
    pub margin_m: f64,
}

impl Default for TransmitterParams {
    fn default() -> Self {
        Self {
            height_m: (10.0, 40.0),
            omni_fraction: 0.5,
            g_max_db: 0.0,
            sector_theta_3db_deg: 65.0,
            sector_a_max_db: 20.0,
            margin_m: 0.0,
        }
    }
}

/// Full synthetic dataset recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub tiles: usize,
    pub seed: u64,
    pub tx_per_tile: usize,
    pub tile_size_px: usize,
    pub h_max: f32,
    pub scene: SceneParams,
    pub render: RenderParams,
    pub transmitters: TransmitterParams,
    pub oracle: OracleParams,
    pub normalization: PathlossNormalization,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tiles: 16,
            seed: 0,
            tx_per_tile: 2,
            tile_size_px: 64,
            h_max: crate::geodata::DEFAULT_H_MAX,
            scene: SceneParams::default(),
            render: RenderParams::default(),
            transmitters: TransmitterParams::default(),
            oracle: OracleParams::default(),
            normalization: PathlossNormalization::default(),
        }
    }
}

impl SynthConfig {
    pub fn resolution_m(&self) -> f64 {
        self.scene.tile_extent_m / self.tile_size_px as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size_px == 0 {
            return Err(Error::invalid("tile size must be positive"));
        }
        if self.tiles < 3 {
            return Err(Error::invalid("a dataset needs at least 3 tiles to split"));
        }
        let (lo, hi) = self.transmitters.height_m;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("transmitter height range must be positive"));
        }
        if !(0.0..=1.0).contains(&self.transmitters.omni_fraction) {
            return Err(Error::invalid("omni fraction must be in [0, 1]"));
        }
        if !(self.transmitters.margin_m >= 0.0
            && 2.0 * self.transmitters.margin_m < self.scene.tile_extent_m)
        {
            return Err(Error::invalid("transmitter margin leaves no room in the tile"));
        }
        self.scene.validate()?;
        self.oracle.validate()?;
        self.normalization.validate()
    }
}

pub fn tile_id(index: usize) -> String {
    format!("tile_{index:05}")
}

/// Draws one transmitter inside a tile of `extent_m`.
pub fn random_transmitter(rng: &mut impl Rng, extent_m: f64, p: &TransmitterParams) -> TransmitterSpec {
    let (lo, hi) = p.height_m;
    let pattern = if rng.gen_bool(p.omni_fraction) {
        AntennaPattern::Omni { g_max_db: p.g_max_db }
    } else {
        AntennaPattern::Sector {
            g_max_db: p.g_max_db,
            theta_3db_deg: p.sector_theta_3db_deg,
            a_max_db: p.sector_a_max_db,
        }
    };
    TransmitterSpec {
        x: rng.gen_range(p.margin_m..extent_m - p.margin_m),
        y: rng.gen_range(p.margin_m..extent_m - p.margin_m),
        height_m: if hi > lo { rng.gen_range(lo..=hi) } else { lo },
        azimuth_deg: rng.gen_range(0.0..360.0),
        pattern,
    }
}

/// One generated tile with its transmitters and oracle maps.
pub struct SynthTile {
    pub tile: Tile,
    pub samples: Vec<(TransmitterSpec, crate::geodata::RadioMap)>,
}

/// Builds tile `index` of the dataset described by `cfg`.
pub fn synth_tile(cfg: &SynthConfig, index: usize) -> Result<SynthTile> {
    // every tile gets an independent stream so tiles can be built in any order
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let scene_seed: u64 = rng.gen();
    let render_seed: u64 = rng.gen();
    let res = cfg.resolution_m();
    let render = RenderParams {
        h_max: cfg.h_max as f64,
        ..cfg.render.clone()
    };
    let scene = generate_scene(scene_seed, &cfg.scene)?;
    let elevation = rasterize_scene(&scene, res, cfg.h_max)?;
    let image = render_pseudo_rgb(&scene, res, render_seed, &render)?;
    let extent = cfg.scene.tile_extent_m;
    let col = index % 64;
    let row = index / 64;
    let tile = Tile::new(
        tile_id(index),
        image,
        elevation,
        res,
        (col as f64 * extent, row as f64 * extent),
    )?;
    let samples = (0..cfg.tx_per_tile)
        .map(|_| {
            let tx = random_transmitter(&mut rng, extent, &cfg.transmitters);
            let rem = oracle_pathloss(&tile.elevation, res, &tx, &cfg.oracle, &cfg.normalization)?;
            Ok((tx, rem))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthTile { tile, samples })
}

/// Writes a complete dataset (tiles, transmitters, oracle maps, split) to `out`.
pub fn generate_dataset(out: &Path, cfg: &SynthConfig) -> Result<(DatasetStore, DatasetSplit)> {
    use rayon::prelude::*;

    cfg.validate()?;
    let info = DatasetInfo {
        format_version: DATASET_FORMAT_VERSION,
        normalization: cfg.normalization,
        h_max: cfg.h_max,
        tile_size_px: cfg.tile_size_px,
        resolution_m: cfg.resolution_m(),
        generator: Some(serde_json::to_value(cfg).expect("config serialises")),
    };
    let store = DatasetStore::create(out, info)?;
    (0..cfg.tiles).into_par_iter().try_for_each(|i| -> Result<()> {
        let st = synth_tile(cfg, i)?;
        store.save_tile(&st.tile)?;
        for (k, (tx, rem)) in st.samples.iter().enumerate() {
            store.save_sample(&st.tile.id, k, tx, rem)?;
        }
        Ok(())
    })?;
    let ids: Vec<String> = (0..cfg.tiles).map(tile_id).collect();
    let split = split_dataset(&ids, cfg.seed)?;
    store.write_split(&split)?;
    Ok((store, split))
}
