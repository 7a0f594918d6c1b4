//! Closed-form pathloss oracle: free-space loss, antenna gain and a
//! per-cell obstruction penalty along the digital line of sight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{
    AntennaPattern, ElevationMap, Grid, PathlossNormalization, RadioMap, TransmitterSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleParams {
    pub frequency_ghz: f64,
    pub d_min_m: f64,
    /// Loss added for each obstructing cell.
    pub l_block_db: f64,
    /// Ceiling on the total obstruction loss.
    pub l_block_cap_db: f64,
    pub rx_height_m: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            frequency_ghz: 3.5,
            d_min_m: 1.0,
            l_block_db: 15.0,
            l_block_cap_db: 60.0,
            rx_height_m: 1.5,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.frequency_ghz,
            self.d_min_m,
            self.l_block_db,
            self.l_block_cap_db,
            self.rx_height_m,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(Error::invalid("oracle parameters must be positive"));
        }
        if self.l_block_cap_db < self.l_block_db {
            return Err(Error::invalid("obstruction cap below per-cell loss"));
        }
        Ok(())
    }

    /// Free-space pathloss in dB at distance `d_m` (after the distance floor).
    pub fn free_space_db(&self, d_m: f64) -> f64 {
        let d_km = d_m.max(self.d_min_m) / 1000.0;
        92.45 + 20.0 * d_km.log10() + 20.0 * self.frequency_ghz.log10()
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    (deg + 180.0).rem_euclid(360.0) - 180.0
}

/// Gain in dB toward a direction `offset_deg` away from boresight.
pub fn antenna_gain_toward(pattern: &AntennaPattern, offset_deg: f64) -> f64 {
    match *pattern {
        AntennaPattern::Omni { g_max_db } => g_max_db,
        AntennaPattern::Sector {
            g_max_db,
            theta_3db_deg,
            a_max_db,
        } => {
            let off = wrap_degrees(offset_deg);
            let ratio = off / theta_3db_deg;
            g_max_db - (12.0 * ratio * ratio).min(a_max_db)
        }
    }
}

/// Direction from the transmitter to a point, degrees from +x toward +y.
pub fn bearing_deg(tx: &TransmitterSpec, px: f64, py: f64) -> f64 {
    (py - tx.y).atan2(px - tx.x).to_degrees()
}

/// Cells strictly between `from` and `to` on the digital line, paired with
/// the fraction of the way along the line.
///
/// Steps one cell at a time along the dominant axis; where the minor
/// coordinate lands exactly between two cells both are visited. This keeps
/// the cell set invariant under all eight square symmetries.
pub fn digital_line(
    from: (usize, usize),
    to: (usize, usize),
    mut visit: impl FnMut(usize, usize, f64),
) {
    let (r0, c0) = (from.0 as i64, from.1 as i64);
    let dr = to.0 as i64 - r0;
    let dc = to.1 as i64 - c0;
    let n = dr.abs().max(dc.abs());
    if n <= 1 {
        return;
    }
    let col_major = dc.abs() >= dr.abs();
    let (major0, minor0, dmajor, dminor) = if col_major {
        (c0, r0, dc, dr)
    } else {
        (r0, c0, dr, dc)
    };
    let step = dmajor.signum();
    for s in 1..n {
        let major = major0 + step * s;
        let num = dminor * s;
        let q = num.div_euclid(n);
        let rem2 = 2 * num.rem_euclid(n);
        let t = s as f64 / n as f64;
        let mut emit = |minor: i64| {
            let (r, c) = if col_major { (minor, major) } else { (major, minor) };
            visit(r as usize, c as usize, t);
        };
        match rem2.cmp(&n) {
            std::cmp::Ordering::Less => emit(minor0 + q),
            std::cmp::Ordering::Greater => emit(minor0 + q + 1),
            std::cmp::Ordering::Equal => {
                emit(minor0 + q);
                emit(minor0 + q + 1);
            }
        }
    }
}

/// Number of cells on the line of sight whose height exceeds the straight
/// line from the transmitter antenna to the receiver.
pub fn blocked_cells(
    heights: &Grid<f32>,
    tx_cell: (usize, usize),
    rx_cell: (usize, usize),
    tx_height_m: f64,
    rx_height_m: f64,
) -> usize {
    let mut count = 0;
    digital_line(tx_cell, rx_cell, |r, c, t| {
        let ray = tx_height_m + (rx_height_m - tx_height_m) * t;
        if f64::from(*heights.get(r, c)) > ray {
            count += 1;
        }
    });
    count
}

/// Oracle pathloss in dB before normalisation.
pub fn oracle_pathloss_db(
    elevation: &ElevationMap,
    resolution_m: f64,
    tx: &TransmitterSpec,
    params: &OracleParams,
) -> Result<Grid<f64>> {
    params.validate()?;
    let (n, w) = elevation.shape();
    if n != w {
        return Err(Error::DimensionMismatch(format!(
            "oracle needs a square elevation grid, got {n}x{w}"
        )));
    }
    tx.validate(resolution_m * n as f64)?;
    let tx_cell = tx.pixel(resolution_m, n);
    let dz = tx.height_m - params.rx_height_m;
    let mut out = Grid::filled(n, n, 0.0);
    for r in 0..n {
        let py = (r as f64 + 0.5) * resolution_m;
        for c in 0..n {
            let px = (c as f64 + 0.5) * resolution_m;
            let dx = px - tx.x;
            let dy = py - tx.y;
            let d = (dx * dx + dy * dy + dz * dz).sqrt();
            let free = params.free_space_db(d);
            let gain = antenna_gain_toward(&tx.pattern, bearing_deg(tx, px, py) - tx.azimuth_deg);
            let blocked = blocked_cells(
                &elevation.heights,
                tx_cell,
                (r, c),
                tx.height_m,
                params.rx_height_m,
            );
            let obstruction = (blocked as f64 * params.l_block_db).min(params.l_block_cap_db);
            out.set(r, c, free - gain + obstruction);
        }
    }
    Ok(out)
}

/// Oracle radio map, normalised.
pub fn oracle_pathloss(
    elevation: &ElevationMap,
    resolution_m: f64,
    tx: &TransmitterSpec,
    params: &OracleParams,
    norm: &PathlossNormalization,
) -> Result<RadioMap> {
    norm.validate()?;
    let db = oracle_pathloss_db(elevation, resolution_m, tx, params)?;
    RadioMap::new(db.map(|pl| norm.normalize(*pl) as f32), *norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    use crate::geodata::{ElevationSource, Symmetry};

    fn omni_at(x: f64, y: f64, h: f64) -> TransmitterSpec {
        TransmitterSpec {
            x,
            y,
            height_m: h,
            azimuth_deg: 0.0,
            pattern: AntennaPattern::Omni { g_max_db: 0.0 },
        }
    }

    #[test]
    fn free_space_closed_form() {
        // 92.45 + 20 log10(0.1) + 20 log10(3.5) = 92.45 - 20 + 10.8814 = 83.3314
        let p = OracleParams::default();
        let expected = 92.45 - 20.0 + 20.0 * 3.5f64.log10();
        assert!((expected - 83.3314).abs() < 1e-4);
        assert!((p.free_space_db(100.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn flat_scene_matches_free_space_at_100m() {
        // 2D offset (96, 28) and height offset 0 gives exactly 100 m
        let elev = ElevationMap::flat(64, 32.0);
        let tx = omni_at(2.0, 2.0, 1.5);
        let db = oracle_pathloss_db(&elev, 4.0, &tx, &OracleParams::default()).unwrap();
        // pixel centre (98, 30) -> row 7, col 24
        assert!((db.get(7, 24) - 83.3314).abs() < 1e-3);
    }

    #[test]
    fn distance_floor_at_transmitter_pixel() {
        let elev = ElevationMap::flat(8, 32.0);
        let tx = omni_at(2.0, 2.0, 1.5);
        let p = OracleParams::default();
        let db = oracle_pathloss_db(&elev, 4.0, &tx, &p).unwrap();
        assert_eq!(*db.get(0, 0), p.free_space_db(p.d_min_m));
    }

    #[test]
    fn sector_pattern_values() {
        let s = AntennaPattern::Sector {
            g_max_db: 8.0,
            theta_3db_deg: 60.0,
            a_max_db: 20.0,
        };
        assert_eq!(antenna_gain_toward(&s, 0.0), 8.0);
        assert!((antenna_gain_toward(&s, 30.0) - 5.0).abs() < 1e-12);
        assert!((antenna_gain_toward(&s, -30.0) - 5.0).abs() < 1e-12);
        assert_eq!(antenna_gain_toward(&s, 180.0), -12.0);
        assert_eq!(antenna_gain_toward(&s, 350.0), antenna_gain_toward(&s, -10.0));
        let o = AntennaPattern::Omni { g_max_db: 2.0 };
        assert_eq!(antenna_gain_toward(&o, 123.0), 2.0);
    }

    #[test]
    fn digital_line_excludes_endpoints_and_marks_ties() {
        let mut cells = Vec::new();
        digital_line((0, 0), (0, 4), |r, c, t| cells.push((r, c, t)));
        assert_eq!(cells, vec![(0, 1, 0.25), (0, 2, 0.5), (0, 3, 0.75)]);

        // slope 1/2: middle step lands exactly between rows 0 and 1
        let mut cells = BTreeSet::new();
        digital_line((0, 0), (1, 2), |r, c, _| {
            cells.insert((r, c));
        });
        assert_eq!(cells, BTreeSet::from([(0, 1), (1, 1)]));

        let mut none = 0;
        digital_line((3, 3), (4, 4), |_, _, _| none += 1);
        assert_eq!(none, 0);
    }

    #[test]
    fn digital_line_is_reversible() {
        for (a, b) in [((0, 0), (5, 13)), ((7, 2), (1, 9)), ((3, 3), (3, 10))] {
            let mut fwd = BTreeSet::new();
            digital_line(a, b, |r, c, _| {
                fwd.insert((r, c));
            });
            let mut back = BTreeSet::new();
            digital_line(b, a, |r, c, _| {
                back.insert((r, c));
            });
            assert_eq!(fwd, back);
        }
    }

    #[test]
    fn a_wall_adds_one_block_per_cell() {
        let mut heights = Grid::filled(16, 16, 0.0f32);
        for r in 0..16 {
            heights.set(r, 8, 30.0);
            heights.set(r, 9, 30.0);
        }
        let elev = ElevationMap::checked(heights, ElevationSource::True, 32.0).unwrap();
        let p = OracleParams::default();
        let tx = omni_at(2.5, 30.5, 10.0);
        let flat = oracle_pathloss_db(&ElevationMap::flat(16, 32.0), 4.0, &tx, &p).unwrap();
        let walled = oracle_pathloss_db(&elev, 4.0, &tx, &p).unwrap();
        assert!((walled.get(7, 14) - flat.get(7, 14) - 30.0).abs() < 1e-9);
        assert_eq!(walled.get(7, 3), flat.get(7, 3));
    }

    #[test]
    fn obstruction_is_capped() {
        let heights = Grid::filled(32, 32, 32.0f32);
        let elev = ElevationMap::checked(heights, ElevationSource::True, 32.0).unwrap();
        let p = OracleParams::default();
        let tx = omni_at(2.0, 2.0, 10.0);
        let flat = oracle_pathloss_db(&ElevationMap::flat(32, 32.0), 1.0, &tx, &p).unwrap();
        let db = oracle_pathloss_db(&elev, 1.0, &tx, &p).unwrap();
        assert!((db.get(31, 31) - flat.get(31, 31) - p.l_block_cap_db).abs() < 1e-9);
    }

    #[test]
    fn rejects_outside_transmitter() {
        let elev = ElevationMap::flat(8, 32.0);
        let err = oracle_pathloss(
            &elev,
            4.0,
            &omni_at(40.0, 1.0, 5.0),
            &OracleParams::default(),
            &PathlossNormalization::default(),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn quarter_turn_rotates_the_map() {
        let mut heights = Grid::filled(16, 16, 0.0f32);
        for (r, c) in [(3, 4), (3, 5), (10, 12), (11, 12), (8, 2)] {
            heights.set(r, c, 20.0);
        }
        let elev = ElevationMap::checked(heights, ElevationSource::True, 32.0).unwrap();
        let tx = omni_at(21.25, 37.5, 12.0);
        let p = OracleParams::default();
        let norm = PathlossNormalization::default();
        let base = oracle_pathloss(&elev, 4.0, &tx, &p, &norm).unwrap();
        let s = Symmetry::ROT90;
        let rot_elev = ElevationMap {
            heights: elev.heights.transformed(s),
            ..elev.clone()
        };
        let (x, y) = s.map_point(tx.x, tx.y, 64.0);
        let rot = oracle_pathloss(&rot_elev, 4.0, &TransmitterSpec { x, y, ..tx }, &p, &norm).unwrap();
        assert_eq!(rot.values, base.values.transformed(s));
    }
}
