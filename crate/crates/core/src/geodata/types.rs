use serde::{Deserialize, Serialize};

use super::grid::{Grid, RgbImage};
use crate::error::{Error, Result};

/// Default height ceiling in meters for nDSM clipping and normalisation.
pub const DEFAULT_H_MAX: f32 = 32.0;
/// Physical tile edge in meters.
pub const DEFAULT_TILE_EXTENT_M: f64 = 256.0;
pub const DEFAULT_TILE_SIZE_PX: usize = 256;

/// Maps a height in meters onto `[0, 1]`, clipping at `h_max`.
pub fn normalize_height(h: f64, h_max: f64) -> Result<f64> {
    if !(h_max > 0.0) {
        return Err(Error::invalid(format!("h_max must be positive, got {h_max}")));
    }
    Ok(h.clamp(0.0, h_max) / h_max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElevationSource {
    True,
    Predicted,
}

/// Per-pixel above-ground height in meters (nDSM).
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationMap {
    pub heights: Grid<f32>,
    pub source: ElevationSource,
    pub h_max: f32,
}

impl ElevationMap {
    /// Builds a map, clipping every height into `[0, h_max]`.
    pub fn clipped(mut heights: Grid<f32>, source: ElevationSource, h_max: f32) -> Result<Self> {
        if !(h_max > 0.0) {
            return Err(Error::invalid(format!("h_max must be positive, got {h_max}")));
        }
        for h in heights.data_mut() {
            *h = if h.is_nan() { 0.0 } else { h.clamp(0.0, h_max) };
        }
        Ok(Self {
            heights,
            source,
            h_max,
        })
    }

    /// Builds a map without clipping; fails if any height is out of range.
    pub fn checked(heights: Grid<f32>, source: ElevationSource, h_max: f32) -> Result<Self> {
        if !(h_max > 0.0) {
            return Err(Error::invalid(format!("h_max must be positive, got {h_max}")));
        }
        if let Some(bad) = heights
            .data()
            .iter()
            .find(|h| !(**h >= 0.0 && **h <= h_max))
        {
            return Err(Error::invalid(format!(
                "height {bad} outside [0, {h_max}]"
            )));
        }
        Ok(Self {
            heights,
            source,
            h_max,
        })
    }

    pub fn flat(size: usize, h_max: f32) -> Self {
        Self {
            heights: Grid::filled(size, size, 0.0),
            source: ElevationSource::True,
            h_max,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.heights.shape()
    }

    pub fn normalized(&self) -> Grid<f32> {
        self.heights.map(|h| h / self.h_max)
    }
}

/// Antenna radiation pattern.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AntennaPattern {
    Omni {
        g_max_db: f64,
    },
    Sector {
        g_max_db: f64,
        theta_3db_deg: f64,
        a_max_db: f64,
    },
}

impl AntennaPattern {
    pub fn g_max_db(&self) -> f64 {
        match *self {
            AntennaPattern::Omni { g_max_db } | AntennaPattern::Sector { g_max_db, .. } => {
                g_max_db
            }
        }
    }

    /// Largest attenuation below peak the pattern can produce.
    pub fn max_attenuation_db(&self) -> f64 {
        match *self {
            AntennaPattern::Omni { .. } => 0.0,
            AntennaPattern::Sector { a_max_db, .. } => a_max_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.g_max_db();
        if !g.is_finite() {
            return Err(Error::invalid("antenna peak gain must be finite"));
        }
        if let AntennaPattern::Sector {
            theta_3db_deg,
            a_max_db,
            ..
        } = *self
        {
            if !(theta_3db_deg > 0.0 && theta_3db_deg <= 360.0) {
                return Err(Error::invalid(format!(
                    "beamwidth {theta_3db_deg} outside (0, 360]"
                )));
            }
            if !(a_max_db >= 0.0 && a_max_db.is_finite()) {
                return Err(Error::invalid(format!(
                    "attenuation floor {a_max_db} must be non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Transmitter placement within a tile, in tile-local meters.
///
/// `x` grows with image column, `y` with image row. Azimuth is measured in
/// degrees from +x toward +y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmitterSpec {
    pub x: f64,
    pub y: f64,
    pub height_m: f64,
    pub azimuth_deg: f64,
    pub pattern: AntennaPattern,
}

impl TransmitterSpec {
    pub fn validate(&self, extent_m: f64) -> Result<()> {
        if !(self.x >= 0.0 && self.x < extent_m && self.y >= 0.0 && self.y < extent_m) {
            return Err(Error::invalid(format!(
                "transmitter ({}, {}) outside tile extent {extent_m} m",
                self.x, self.y
            )));
        }
        if !(self.height_m > 0.0 && self.height_m.is_finite()) {
            return Err(Error::invalid(format!(
                "transmitter height {} must be positive",
                self.height_m
            )));
        }
        if !(self.azimuth_deg >= 0.0 && self.azimuth_deg < 360.0) {
            return Err(Error::invalid(format!(
                "azimuth {} outside [0, 360)",
                self.azimuth_deg
            )));
        }
        self.pattern.validate()
    }

    /// Pixel `(row, col)` containing the transmitter.
    pub fn pixel(&self, resolution_m: f64, size_px: usize) -> (usize, usize) {
        let col = ((self.x / resolution_m).floor() as usize).min(size_px - 1);
        let row = ((self.y / resolution_m).floor() as usize).min(size_px - 1);
        (row, col)
    }
}

/// Linear dB ↔ `[0, 1]` mapping for pathloss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathlossNormalization {
    pub pl_min_db: f64,
    pub pl_max_db: f64,
}

impl Default for PathlossNormalization {
    fn default() -> Self {
        Self {
            pl_min_db: 50.0,
            pl_max_db: 150.0,
        }
    }
}

impl PathlossNormalization {
    pub fn new(pl_min_db: f64, pl_max_db: f64) -> Result<Self> {
        let n = Self {
            pl_min_db,
            pl_max_db,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pl_min_db.is_finite() && self.pl_max_db.is_finite())
            || self.pl_max_db <= self.pl_min_db
        {
            return Err(Error::invalid(format!(
                "pathloss range [{}, {}] must be finite and increasing",
                self.pl_min_db, self.pl_max_db
            )));
        }
        Ok(())
    }

    pub fn scale_db(&self) -> f64 {
        self.pl_max_db - self.pl_min_db
    }

    pub fn normalize(&self, pl_db: f64) -> f64 {
        (pl_db.clamp(self.pl_min_db, self.pl_max_db) - self.pl_min_db) / self.scale_db()
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        self.pl_min_db + value * self.scale_db()
    }

    /// Converts an error metric on normalised values into dB.
    pub fn error_to_db(&self, normalized_error: f64) -> f64 {
        normalized_error * self.scale_db()
    }
}

/// Per-pixel pathloss, stored normalised to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadioMap {
    pub values: Grid<f32>,
    pub normalization: PathlossNormalization,
}

impl RadioMap {
    /// Validates that every value lies in `[0, 1]`.
    pub fn new(values: Grid<f32>, normalization: PathlossNormalization) -> Result<Self> {
        normalization.validate()?;
        if let Some(bad) = values.data().iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::invalid(format!(
                "radio map value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            values,
            normalization,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn to_db(&self) -> Grid<f64> {
        self.values
            .map(|v| self.normalization.denormalize(*v as f64))
    }
}

/// One square scene: image, elevation and placement metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub id: String,
    pub image: RgbImage,
    pub elevation: ElevationMap,
    pub resolution_m: f64,
    pub origin: (f64, f64),
}

impl Tile {
    pub fn new(
        id: impl Into<String>,
        image: RgbImage,
        elevation: ElevationMap,
        resolution_m: f64,
        origin: (f64, f64),
    ) -> Result<Self> {
        let tile = Self {
            id: id.into(),
            image,
            elevation,
            resolution_m,
            origin,
        };
        tile.validate()?;
        Ok(tile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(Error::invalid(format!("unusable tile id {:?}", self.id)));
        }
        let (h, w) = self.image.shape();
        if h != w {
            return Err(Error::DimensionMismatch(format!(
                "tile {} image is {h}x{w}, expected square",
                self.id
            )));
        }
        if self.elevation.shape() != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "tile {} image {h}x{w} vs elevation {:?}",
                self.id,
                self.elevation.shape()
            )));
        }
        if !(self.resolution_m > 0.0 && self.resolution_m.is_finite()) {
            return Err(Error::invalid(format!(
                "resolution {} must be positive",
                self.resolution_m
            )));
        }
        Ok(())
    }

    pub fn size_px(&self) -> usize {
        self.image.height()
    }

    pub fn extent_m(&self) -> f64 {
        self.resolution_m * self.size_px() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn height_normalisation_examples() {
        assert_eq!(normalize_height(0.0, 32.0).unwrap(), 0.0);
        assert_eq!(normalize_height(32.0, 32.0).unwrap(), 1.0);
        assert_eq!(normalize_height(48.0, 32.0).unwrap(), 1.0);
        assert!(matches!(
            normalize_height(1.0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(normalize_height(1.0, -3.0).is_err());
    }

    #[test]
    fn pathloss_bounds() {
        let n = PathlossNormalization::new(50.0, 150.0).unwrap();
        assert_eq!(n.normalize(50.0), 0.0);
        assert_eq!(n.normalize(150.0), 1.0);
        assert_eq!(n.scale_db(), 100.0);
        assert!(PathlossNormalization::new(10.0, 10.0).is_err());
    }

    #[test]
    fn normalized_rmse_to_db() {
        // two-element check: y = [0, 0.1039...] against zeros gives rmse 0.0735
        let n = PathlossNormalization::default();
        let e = 0.0735_f64 * 2f64.sqrt();
        let rmse = ((e * e + 0.0) / 2.0).sqrt();
        assert!((n.error_to_db(rmse) - 7.35).abs() < 1e-9);
    }

    #[test]
    fn transmitter_validation() {
        let tx = TransmitterSpec {
            x: 10.0,
            y: 10.0,
            height_m: 20.0,
            azimuth_deg: 0.0,
            pattern: AntennaPattern::Omni { g_max_db: 0.0 },
        };
        assert!(tx.validate(256.0).is_ok());
        assert!(TransmitterSpec { x: 256.0, ..tx }.validate(256.0).is_err());
        assert!(TransmitterSpec { height_m: 0.0, ..tx }.validate(256.0).is_err());
        assert!(TransmitterSpec {
            azimuth_deg: 360.0,
            ..tx
        }
        .validate(256.0)
        .is_err());
        assert_eq!(tx.pixel(4.0, 64), (2, 2));
    }

    #[test]
    fn tile_rejects_mismatched_grids() {
        let img = RgbImage::filled(4, 4, [0, 0, 0]);
        let elev = ElevationMap::flat(5, 32.0);
        assert!(matches!(
            Tile::new("a", img, elev, 1.0, (0.0, 0.0)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn clipping_bounds_heights() {
        let g = Grid::from_vec(1, 3, vec![-1.0, 5.0, 40.0]).unwrap();
        let e = ElevationMap::clipped(g, ElevationSource::True, 32.0).unwrap();
        assert_eq!(e.heights.data(), &[0.0, 5.0, 32.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn normalize_height_monotone_and_saturating(a in -50.0f64..100.0, b in -50.0f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let h_max = 32.0;
            prop_assert!(normalize_height(lo, h_max).unwrap() <= normalize_height(hi, h_max).unwrap());
            if lo >= h_max {
                prop_assert_eq!(normalize_height(lo, h_max).unwrap(), normalize_height(hi, h_max).unwrap());
            }
        }

        #[test]
        fn denormalize_inverts_normalize_up_to_clamp(pl in -100.0f64..300.0) {
            let n = PathlossNormalization::default();
            let back = n.denormalize(n.normalize(pl));
            prop_assert!((back - pl.clamp(50.0, 150.0)).abs() < 1e-9);
        }
    }
}
