use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{owner_map, Scene};
use crate::error::Result;
use crate::geodata::RgbImage;

const ROOF_BASE: f64 = 100.0;
const ROOF_SPAN: f64 = 140.0;
const GROUND_RGB: [f64; 3] = [96.0, 112.0, 84.0];
const OUTLINE_RGB: [u8; 3] = [40, 40, 44];

/// Appearance knobs for the pseudo-aerial renderer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    /// Height mapped to the brightest roof tone.
    pub h_max: f64,
    /// Per-building brightness offset, uniform in `[-roof_noise, roof_noise]`.
    pub roof_noise: f64,
    /// Per-pixel roof jitter amplitude.
    pub pixel_noise: f64,
    /// Per-pixel ground texture amplitude.
    pub ground_texture: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            h_max: crate::geodata::DEFAULT_H_MAX as f64,
            roof_noise: 6.0,
            pixel_noise: 2.0,
            ground_texture: 14.0,
        }
    }
}

/// Noise-free roof tone; strictly increasing in height up to `h_max`.
pub fn roof_brightness(roof_height_m: f64, h_max: f64) -> f64 {
    ROOF_BASE + ROOF_SPAN * (roof_height_m.clamp(0.0, h_max) / h_max)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Renders a synthetic aerial image whose roof tones encode building height.
pub fn render_pseudo_rgb(
    scene: &Scene,
    resolution_m: f64,
    seed: u64,
    params: &RenderParams,
) -> Result<RgbImage> {
    let owners = owner_map(scene, resolution_m)?;
    let n = owners.height();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed.rotate_left(17) ^ seed);
    let offsets: Vec<f64> = scene
        .buildings
        .iter()
        .map(|_| {
            if params.roof_noise > 0.0 {
                rng.gen_range(-params.roof_noise..=params.roof_noise)
            } else {
                0.0
            }
        })
        .collect();
    let mut jitter = |amp: f64| {
        if amp > 0.0 {
            rng.gen_range(-amp..=amp)
        } else {
            0.0
        }
    };

    let mut img = RgbImage::filled(n, n, [0, 0, 0]);
    for r in 0..n {
        for c in 0..n {
            let rgb = match *owners.get(r, c) {
                None => {
                    let t = jitter(params.ground_texture);
                    [
                        to_u8(GROUND_RGB[0] + t),
                        to_u8(GROUND_RGB[1] + t),
                        to_u8(GROUND_RGB[2] + 0.5 * t),
                    ]
                }
                Some(i) => {
                    let on_border = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|(dr, dc)| {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        rr < 0
                            || cc < 0
                            || rr >= n as i64
                            || cc >= n as i64
                            || *owners.get(rr as usize, cc as usize) != Some(i)
                    });
                    let t = jitter(params.pixel_noise);
                    if on_border {
                        OUTLINE_RGB
                    } else {
                        let b = roof_brightness(scene.buildings[i].roof_height_m, params.h_max)
                            + offsets[i]
                            + t;
                        let v = to_u8(b);
                        [v, v, v]
                    }
                }
            };
            img.put_pixel(r, c, rgb);
        }
    }
    Ok(img)
}
