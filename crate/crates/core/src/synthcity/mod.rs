//! Procedural synthetic scenes and an analytic pathloss oracle used as
//! ground truth.

mod dataset;
mod oracle;
mod render;
mod scene;

pub use dataset::{
    generate_dataset, random_transmitter, synth_tile, tile_id, SynthConfig, SynthTile,
    TransmitterParams,
};
pub use oracle::{
    antenna_gain_toward, bearing_deg, blocked_cells, digital_line, oracle_pathloss,
    oracle_pathloss_db, wrap_degrees, OracleParams,
};
pub use render::{render_pseudo_rgb, roof_brightness, RenderParams};
pub use scene::{generate_scene, rasterize_scene, Building, Scene, SceneParams};
