//! Raster and tile data model, on-disk format, normalisation and splitting.

mod grid;
pub mod io;
mod split;
mod types;

pub use grid::{Grid, RgbImage, Symmetry};
pub use io::{
    load_radiomap, load_tile, save_radiomap, save_tile, DatasetInfo, DatasetStore, TileMeta,
};
pub use split::{split_dataset, DatasetSplit};
pub use types::{
    normalize_height, AntennaPattern, ElevationMap, ElevationSource, PathlossNormalization,
    RadioMap, Tile, TransmitterSpec, DEFAULT_H_MAX, DEFAULT_TILE_EXTENT_M, DEFAULT_TILE_SIZE_PX,
};
