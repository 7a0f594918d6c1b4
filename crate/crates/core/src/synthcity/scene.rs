use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{ElevationMap, ElevationSource, Grid, DEFAULT_H_MAX, DEFAULT_TILE_EXTENT_M};

/// Axis-aligned building footprint `[x, x+width) × [y, y+depth)` in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub depth: f64,
    pub roof_height_m: f64,
}

impl Building {
    fn covers(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x + self.width && py >= self.y && py < self.y + self.depth
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub buildings: Vec<Building>,
    pub tile_size_m: f64,
    pub seed: u64,
}

/// Building generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub tile_extent_m: f64,
    /// Mean buildings per hectare; the drawn count is within ±25 % of it.
    pub density_per_ha: f64,
    pub footprint_m: (f64, f64),
    pub roof_height_m: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            tile_extent_m: DEFAULT_TILE_EXTENT_M,
            density_per_ha: 3.0,
            footprint_m: (10.0, 40.0),
            roof_height_m: (4.0, DEFAULT_H_MAX as f64),
        }
    }
}

impl SceneParams {
    /// Inclusive bounds on the number of buildings a scene may contain.
    pub fn count_range(&self) -> (usize, usize) {
        let area_ha = self.tile_extent_m * self.tile_extent_m / 10_000.0;
        let mean = self.density_per_ha * area_ha;
        ((mean * 0.75).floor() as usize, (mean * 1.25).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let (fmin, fmax) = self.footprint_m;
        let (hmin, hmax) = self.roof_height_m;
        if !(self.tile_extent_m > 0.0) {
            return Err(Error::invalid("tile extent must be positive"));
        }
        if !(self.density_per_ha >= 0.0 && self.density_per_ha.is_finite()) {
            return Err(Error::invalid("building density must be non-negative"));
        }
        if !(fmin > 0.0 && fmax >= fmin) || !(hmin > 0.0 && hmax >= hmin) {
            return Err(Error::invalid("size ranges must be positive and ordered"));
        }
        if fmax > self.tile_extent_m {
            return Err(Error::invalid(format!(
                "building side up to {fmax} m cannot fit in a {} m tile",
                self.tile_extent_m
            )));
        }
        Ok(())
    }
}

/// Draws a random city block layout. Buildings never cross the tile border;
/// overlaps are allowed.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = params.count_range();
    let count = if hi == 0 { 0 } else { rng.gen_range(lo..=hi) };
    let extent = params.tile_extent_m;
    let draw = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| {
        if b > a {
            rng.gen_range(a..=b)
        } else {
            a
        }
    };
    let mut buildings = Vec::with_capacity(count);
    while buildings.len() < count {
        let width = draw(&mut rng, params.footprint_m);
        let depth = draw(&mut rng, params.footprint_m);
        let x = rng.gen_range(0.0..extent);
        let y = rng.gen_range(0.0..extent);
        // rejection keeps the position distribution uniform over valid corners
        if x + width > extent || y + depth > extent {
            continue;
        }
        let roof_height_m = draw(&mut rng, params.roof_height_m);
        buildings.push(Building {
            x,
            y,
            width,
            depth,
            roof_height_m,
        });
    }
    Ok(Scene {
        buildings,
        tile_size_m: extent,
        seed,
    })
}

fn grid_size(scene: &Scene, resolution_m: f64) -> Result<usize> {
    let n = scene.tile_size_m / resolution_m;
    if !(resolution_m > 0.0) || (n - n.round()).abs() > 1e-9 || n < 1.0 {
        return Err(Error::invalid(format!(
            "resolution {resolution_m} m does not divide tile size {} m",
            scene.tile_size_m
        )));
    }
    Ok(n.round() as usize)
}

/// Index of the tallest building covering each pixel centre.
pub(crate) fn owner_map(scene: &Scene, resolution_m: f64) -> Result<Grid<Option<usize>>> {
    let n = grid_size(scene, resolution_m)?;
    let mut owners: Grid<Option<usize>> = Grid::filled(n, n, None);
    for (i, b) in scene.buildings.iter().enumerate() {
        let c0 = ((b.x / resolution_m) - 0.5).ceil().max(0.0) as usize;
        let r0 = ((b.y / resolution_m) - 0.5).ceil().max(0.0) as usize;
        for r in r0..n {
            let py = (r as f64 + 0.5) * resolution_m;
            if py >= b.y + b.depth {
                break;
            }
            for c in c0..n {
                let px = (c as f64 + 0.5) * resolution_m;
                if px >= b.x + b.width {
                    break;
                }
                if !b.covers(px, py) {
                    continue;
                }
                let taller = match owners.get(r, c) {
                    Some(j) => b.roof_height_m > scene.buildings[*j].roof_height_m,
                    None => true,
                };
                if taller {
                    owners.set(r, c, Some(i));
                }
            }
        }
    }
    Ok(owners)
}

/// Burns building roofs into an nDSM; overlapping buildings keep the maximum.
pub fn rasterize_scene(scene: &Scene, resolution_m: f64, h_max: f32) -> Result<ElevationMap> {
    let owners = owner_map(scene, resolution_m)?;
    let heights = owners.map(|o| match o {
        Some(i) => scene.buildings[*i].roof_height_m as f32,
        None => 0.0,
    });
    ElevationMap::clipped(heights, ElevationSource::True, h_max)
}
