//! Storage scalability and energy/carbon accounting for LiDAR-based versus
//! image-based elevation acquisition.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const JOULES_PER_WH: f64 = 3600.0;
pub const JOULES_PER_KWH: f64 = 3.6e6;

/// Raw point-cloud storage as a function of covered area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarStorageModel {
    pub bytes_per_point: f64,
    pub density_pts_m2: f64,
    pub area_km2: f64,
}

impl Default for LidarStorageModel {
    fn default() -> Self {
        Self {
            bytes_per_point: 30.0,
            density_pts_m2: 9.8,
            area_km2: 27.79,
        }
    }
}

impl LidarStorageModel {
    /// Uncompressed bytes for one square kilometre.
    pub fn bytes_per_km2(&self) -> f64 {
        1e6 * self.density_pts_m2 * self.bytes_per_point
    }

    /// Uncompressed bytes for the whole area.
    pub fn raw_bytes(&self) -> f64 {
        self.area_km2 * 1e6 * self.density_pts_m2 * self.bytes_per_point
    }
}

/// Area-independent footprint of the learned pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentFootprint {
    pub model_bytes: f64,
    pub aux_input_bytes: f64,
    pub training_peak_bytes: f64,
    pub inference_peak_bytes: f64,
}

impl Default for DeploymentFootprint {
    fn default() -> Self {
        Self {
            model_bytes: 606e6,
            aux_input_bytes: 11e6,
            training_peak_bytes: 20e9,
            inference_peak_bytes: 600e6,
        }
    }
}

impl DeploymentFootprint {
    pub fn deployed_bytes(&self) -> f64 {
        self.model_bytes + self.aux_input_bytes
    }
}

/// Area at which raw LiDAR storage equals the deployed model footprint.
/// `None` when LiDAR storage never grows (zero per-area size).
pub fn storage_crossover_km2(lidar: &LidarStorageModel, deploy: &DeploymentFootprint) -> Option<f64> {
    let per_km2 = lidar.bytes_per_km2();
    let fixed = deploy.deployed_bytes();
    if fixed == 0.0 {
        Some(0.0)
    } else if per_km2 > 0.0 {
        Some(fixed / per_km2)
    } else {
        None
    }
}

/// Grid intensity and survey-drone constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarbonModel {
    pub grid_intensity_g_per_kwh: f64,
    pub battery_wh: f64,
    pub lidar_coverage_km2_per_flight: f64,
    pub rgb_coverage_km2_per_flight: f64,
}

impl Default for CarbonModel {
    fn default() -> Self {
        Self {
            grid_intensity_g_per_kwh: 363.0,
            battery_wh: 526.4,
            lidar_coverage_km2_per_flight: 2.5,
            rgb_coverage_km2_per_flight: 3.0,
        }
    }
}

impl CarbonModel {
    pub fn intensity_g_per_j(&self) -> f64 {
        self.grid_intensity_g_per_kwh / JOULES_PER_KWH
    }

    pub fn co2_g(&self, energy_j: f64) -> f64 {
        co2_g(energy_j, self)
    }
}

/// Number of flights needed to survey `area_km2`.
pub fn flight_count(area_km2: f64, coverage_km2_per_flight: f64) -> Result<u64> {
    if area_km2 < 0.0 || !area_km2.is_finite() {
        return Err(Error::invalid(format!("area must be non-negative, got {area_km2}")));
    }
    if area_km2 == 0.0 {
        return Ok(0);
    }
    if !(coverage_km2_per_flight > 0.0) {
        return Err(Error::invalid("coverage per flight must be positive"));
    }
    Ok((area_km2 / coverage_km2_per_flight).ceil() as u64)
}

/// Energy of `flights` full battery discharges.
pub fn flight_energy_j(flights: u64, battery_wh: f64) -> f64 {
    flights as f64 * battery_wh * JOULES_PER_WH
}

/// Emissions for `energy_j` at the model's grid intensity.
pub fn co2_g(energy_j: f64, carbon: &CarbonModel) -> f64 {
    energy_j * carbon.grid_intensity_g_per_kwh / JOULES_PER_KWH
}

/// Every input of a footprint report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintScenario {
    pub area_km2: f64,
    pub lidar_bytes_per_point: f64,
    pub lidar_density_pts_m2: f64,
    pub model_bytes: f64,
    pub aux_input_bytes: f64,
    pub training_peak_bytes: f64,
    pub inference_peak_bytes: f64,
    pub grid_intensity_g_per_kwh: f64,
    pub battery_wh: f64,
    pub lidar_coverage_km2_per_flight: f64,
    pub rgb_coverage_km2_per_flight: f64,
    /// Measured energy of one Stage-1 training run.
    pub elev_training_energy_kj: f64,
    /// Measured Stage-1 inference energy per tile.
    pub elev_inference_energy_kj_per_tile: f64,
    /// Measured Stage-2 inference energy per tile.
    pub rem_inference_energy_kj_per_tile: f64,
    /// Tiles covering the surveyed area.
    pub tiles: u64,
}

impl Default for FootprintScenario {
    fn default() -> Self {
        let lidar = LidarStorageModel::default();
        let deploy = DeploymentFootprint::default();
        let carbon = CarbonModel::default();
        Self {
            area_km2: lidar.area_km2,
            lidar_bytes_per_point: lidar.bytes_per_point,
            lidar_density_pts_m2: lidar.density_pts_m2,
            model_bytes: deploy.model_bytes,
            aux_input_bytes: deploy.aux_input_bytes,
            training_peak_bytes: deploy.training_peak_bytes,
            inference_peak_bytes: deploy.inference_peak_bytes,
            grid_intensity_g_per_kwh: carbon.grid_intensity_g_per_kwh,
            battery_wh: carbon.battery_wh,
            lidar_coverage_km2_per_flight: carbon.lidar_coverage_km2_per_flight,
            rgb_coverage_km2_per_flight: carbon.rgb_coverage_km2_per_flight,
            elev_training_energy_kj: 411.6,
            elev_inference_energy_kj_per_tile: 0.16,
            rem_inference_energy_kj_per_tile: 0.004,
            tiles: 424,
        }
    }
}

impl FootprintScenario {
    /// All fields zero.
    pub fn zeroed() -> Self {
        Self {
            area_km2: 0.0,
            lidar_bytes_per_point: 0.0,
            lidar_density_pts_m2: 0.0,
            model_bytes: 0.0,
            aux_input_bytes: 0.0,
            training_peak_bytes: 0.0,
            inference_peak_bytes: 0.0,
            grid_intensity_g_per_kwh: 0.0,
            battery_wh: 0.0,
            lidar_coverage_km2_per_flight: 0.0,
            rgb_coverage_km2_per_flight: 0.0,
            elev_training_energy_kj: 0.0,
            elev_inference_energy_kj_per_tile: 0.0,
            rem_inference_energy_kj_per_tile: 0.0,
            tiles: 0,
        }
    }

    /// Parses a scenario object, listing every missing field at once.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::invalid("scenario must be a JSON object"))?;
        let template = serde_json::to_value(Self::default()).expect("scenario serialises");
        let missing: Vec<String> = template
            .as_object()
            .expect("struct serialises to an object")
            .keys()
            .filter(|k| !obj.contains_key(*k))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteScenario(missing));
        }
        let s: Self = serde_json::from_value(value.clone())
            .map_err(|e| Error::invalid(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let v = serde_json::to_value(self).expect("scenario serialises");
        for (k, x) in v.as_object().expect("object") {
            let x = x.as_f64().unwrap_or(0.0);
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::invalid(format!("scenario field {k} must be non-negative, got {x}")));
            }
        }
        Ok(())
    }

    pub fn lidar(&self) -> LidarStorageModel {
        LidarStorageModel {
            bytes_per_point: self.lidar_bytes_per_point,
            density_pts_m2: self.lidar_density_pts_m2,
            area_km2: self.area_km2,
        }
    }

    pub fn deployment(&self) -> DeploymentFootprint {
        DeploymentFootprint {
            model_bytes: self.model_bytes,
            aux_input_bytes: self.aux_input_bytes,
            training_peak_bytes: self.training_peak_bytes,
            inference_peak_bytes: self.inference_peak_bytes,
        }
    }

    pub fn carbon(&self) -> CarbonModel {
        CarbonModel {
            grid_intensity_g_per_kwh: self.grid_intensity_g_per_kwh,
            battery_wh: self.battery_wh,
            lidar_coverage_km2_per_flight: self.lidar_coverage_km2_per_flight,
            rgb_coverage_km2_per_flight: self.rgb_coverage_km2_per_flight,
        }
    }
}

/// One line of the energy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintRow {
    pub item: String,
    pub flights: Option<u64>,
    pub energy_kj: f64,
    pub co2_g: f64,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageSummary {
    pub area_km2: f64,
    pub lidar_raw_bytes: f64,
    pub lidar_bytes_per_km2: f64,
    pub deployed_bytes: f64,
    pub training_peak_bytes: f64,
    pub inference_peak_bytes: f64,
    pub crossover_km2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub scenario: FootprintScenario,
    pub intensity_g_per_j: f64,
    pub rows: Vec<FootprintRow>,
    /// LiDAR survey energy over image survey energy.
    pub lidar_over_rgb_energy: Option<f64>,
    pub storage: StorageSummary,
    pub notes: Vec<String>,
}

impl FootprintReport {
    pub fn row(&self, item: &str) -> Option<&FootprintRow> {
        self.rows.iter().find(|r| r.item == item)
    }
}

pub const ROW_LIDAR_SURVEY: &str = "LiDAR acquisition flights";
pub const ROW_RGB_SURVEY: &str = "RGB acquisition flights";
pub const ROW_ELEV_TRAINING: &str = "Elevation model training";
pub const ROW_ELEV_TILE: &str = "Elevation inference (per tile)";
pub const ROW_ELEV_ALL: &str = "Elevation inference (all tiles)";
pub const ROW_REM_TILE: &str = "Pathloss inference (per tile)";

/// Computes every energy/CO₂ row and the storage model from raw constants.
pub fn footprint_report(s: &FootprintScenario) -> Result<FootprintReport> {
    s.validate()?;
    let carbon = s.carbon();
    let lidar_flights = flight_count(s.area_km2, s.lidar_coverage_km2_per_flight)?;
    let rgb_flights = flight_count(s.area_km2, s.rgb_coverage_km2_per_flight)?;
    let mut rows = Vec::new();
    let mut push = |item: &str, flights: Option<u64>, energy_j: f64, provenance: String| {
        rows.push(FootprintRow {
            item: item.into(),
            flights,
            energy_kj: energy_j / 1e3,
            co2_g: co2_g(energy_j, &carbon),
            provenance,
        });
    };
    let lidar_j = flight_energy_j(lidar_flights, s.battery_wh);
    let rgb_j = flight_energy_j(rgb_flights, s.battery_wh);
    push(
        ROW_LIDAR_SURVEY,
        Some(lidar_flights),
        lidar_j,
        format!(
            "ceil({} km² / {} km² per flight) × {} Wh",
            s.area_km2, s.lidar_coverage_km2_per_flight, s.battery_wh
        ),
    );
    push(
        ROW_RGB_SURVEY,
        Some(rgb_flights),
        rgb_j,
        format!(
            "ceil({} km² / {} km² per flight) × {} Wh",
            s.area_km2, s.rgb_coverage_km2_per_flight, s.battery_wh
        ),
    );
    push(
        ROW_ELEV_TRAINING,
        None,
        s.elev_training_energy_kj * 1e3,
        "measured input constant".into(),
    );
    push(
        ROW_ELEV_TILE,
        None,
        s.elev_inference_energy_kj_per_tile * 1e3,
        "measured input constant".into(),
    );
    push(
        ROW_ELEV_ALL,
        None,
        s.elev_inference_energy_kj_per_tile * 1e3 * s.tiles as f64,
        format!("{} tiles × per-tile energy", s.tiles),
    );
    push(
        ROW_REM_TILE,
        None,
        s.rem_inference_energy_kj_per_tile * 1e3,
        "measured input constant".into(),
    );
    let lidar = s.lidar();
    let deploy = s.deployment();
    Ok(FootprintReport {
        scenario: *s,
        intensity_g_per_j: carbon.intensity_g_per_j(),
        rows,
        lidar_over_rgb_energy: (rgb_j > 0.0).then(|| lidar_j / rgb_j),
        storage: StorageSummary {
            area_km2: s.area_km2,
            lidar_raw_bytes: lidar.raw_bytes(),
            lidar_bytes_per_km2: lidar.bytes_per_km2(),
            deployed_bytes: deploy.deployed_bytes(),
            training_peak_bytes: deploy.training_peak_bytes,
            inference_peak_bytes: deploy.inference_peak_bytes,
            crossover_km2: storage_crossover_km2(&lidar, &deploy),
        },
        notes: vec![
            "CO2 uses the exact grid intensity (g/kWh divided by 3.6e6 J/kWh), not a rounded per-joule constant.".into(),
            "Measured energies are scenario inputs; this tool does not meter energy.".into(),
            "Compressed (LAZ) and archival LAS sizes quoted for the source survey are not modelled: they contradict the per-area raw-size model and are excluded.".into(),
        ],
    })
}

/// Fixed-width text rendering of the report.
pub fn footprint_table(report: &FootprintReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<34} {:>8} {:>14} {:>12}", "item", "flights", "energy [kJ]", "CO2 [g]");
    for r in &report.rows {
        let flights = r.flights.map(|f| f.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<34} {:>8} {:>14.3} {:>12.4}", r.item, flights, r.energy_kj, r.co2_g);
    }
    let st = &report.storage;
    let _ = writeln!(s);
    let _ = writeln!(s, "LiDAR raw storage:      {:.4} GB for {} km²", st.lidar_raw_bytes / 1e9, st.area_km2);
    let _ = writeln!(s, "LiDAR per area:         {:.1} MB/km²", st.lidar_bytes_per_km2 / 1e6);
    let _ = writeln!(s, "Deployed model + aux:   {:.1} MB (constant in area)", st.deployed_bytes / 1e6);
    match st.crossover_km2 {
        Some(a) => {
            let _ = writeln!(s, "Storage crossover:      {a:.4} km²");
        }
        None => {
            let _ = writeln!(s, "Storage crossover:      none (LiDAR size does not grow)");
        }
    }
    if let Some(r) = report.lidar_over_rgb_energy {
        let _ = writeln!(s, "LiDAR/RGB survey energy: {r:.3}x");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn flight_counts() {
        assert_eq!(flight_count(27.79, 2.5).unwrap(), 12);
        assert_eq!(flight_count(27.79, 3.0).unwrap(), 10);
        assert_eq!(flight_count(2.5, 2.5).unwrap(), 1);
        assert_eq!(flight_count(0.0, 0.0).unwrap(), 0);
        assert!(flight_count(1.0, 0.0).is_err());
    }

    #[test]
    fn storage_model() {
        let l = LidarStorageModel::default();
        assert_eq!(l.bytes_per_km2(), 294e6);
        assert!(close(l.raw_bytes(), 8.17e9, 0.005));
        let zero = LidarStorageModel { area_km2: 0.0, ..l };
        assert_eq!(zero.raw_bytes(), 0.0);
        let d = DeploymentFootprint::default();
        let x = storage_crossover_km2(&l, &d).unwrap();
        assert!((x - 617.0 / 294.0).abs() < 1e-12);
        assert!((x - 2.10).abs() < 0.005);
        let dense = LidarStorageModel { density_pts_m2: 19.6, ..l };
        assert!((storage_crossover_km2(&dense, &d).unwrap() - x / 2.0).abs() < 1e-12);
        let none = DeploymentFootprint { model_bytes: 0.0, aux_input_bytes: 0.0, ..d };
        assert_eq!(storage_crossover_km2(&l, &none), Some(0.0));
    }

    #[test]
    fn linearity() {
        let c = CarbonModel::default();
        assert!((co2_g(2.0e6, &c) - 2.0 * co2_g(1.0e6, &c)).abs() < 1e-9);
        let c2 = CarbonModel { grid_intensity_g_per_kwh: 726.0, ..c };
        assert!((co2_g(1.0e6, &c2) - 2.0 * co2_g(1.0e6, &c)).abs() < 1e-9);
        let d = DeploymentFootprint::default();
        for a in [0.5, 1.0, 10.0, 100.0] {
            let l = LidarStorageModel { area_km2: a, ..Default::default() };
            assert!((l.raw_bytes() - a * l.bytes_per_km2()).abs() < 1e-3);
            assert_eq!(d.deployed_bytes(), 617e6);
        }
    }

    #[test]
    fn default_report_rows() {
        let r = footprint_report(&FootprintScenario::default()).unwrap();
        let row = |n: &str| r.row(n).unwrap();
        assert!(close(row(ROW_LIDAR_SURVEY).energy_kj, 22741.0, 0.001));
        assert!((row(ROW_LIDAR_SURVEY).co2_g - 2293.0).abs() < 1.0);
        assert!(close(row(ROW_RGB_SURVEY).energy_kj, 18950.0, 0.001));
        assert!((row(ROW_RGB_SURVEY).co2_g - 1911.0).abs() < 1.0);
        assert!((row(ROW_ELEV_TRAINING).co2_g - 41.50).abs() < 0.01);
        assert!((row(ROW_ELEV_TILE).co2_g - 0.0161).abs() < 1e-4);
        assert!(close(row(ROW_ELEV_ALL).energy_kj, 67.84, 0.001));
        assert!((row(ROW_ELEV_ALL).co2_g - 6.84).abs() < 0.01);
        assert!(row(ROW_REM_TILE).co2_g < 0.01);
        assert!((r.lidar_over_rgb_energy.unwrap() - 1.2).abs() < 1e-12);
        assert!(footprint_table(&r).contains("294.0 MB/km²"));
    }

    #[test]
    fn zeroed_scenario_is_all_zero() {
        let r = footprint_report(&FootprintScenario::zeroed()).unwrap();
        assert!(r.rows.iter().all(|row| row.energy_kj == 0.0 && row.co2_g == 0.0));
        assert_eq!(r.storage.lidar_raw_bytes, 0.0);
        assert_eq!(r.storage.crossover_km2, Some(0.0));
    }

    #[test]
    fn incomplete_scenario_lists_missing_fields() {
        let mut v = serde_json::to_value(FootprintScenario::default()).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("battery_wh");
        obj.remove("tiles");
        match FootprintScenario::from_json(&v) {
            Err(Error::IncompleteScenario(missing)) => {
                assert_eq!(missing, vec!["battery_wh".to_string(), "tiles".to_string()])
            }
            other => panic!("{other:?}"),
        }
        let full = serde_json::to_value(FootprintScenario::default()).unwrap();
        assert_eq!(FootprintScenario::from_json(&full).unwrap(), FootprintScenario::default());
    }
}
