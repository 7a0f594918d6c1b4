//! C ABI over `rem-core`.
//!
//! Conventions:
//! - every fallible function returns an `int32_t` status: `REM_OK` (0) or an
//!   error code; codes 1–99 mirror the core library's error codes;
//! - the message of the most recent failure on the calling thread is
//!   available from [`rem_last_error_message`];
//! - objects are opaque handles created by `*_open`/`*_load` and released
//!   with the matching `*_free`;
//! - output grids are caller-allocated, row-major `float` buffers whose
//!   length is passed explicitly;
//! - strings returned by value are written into caller buffers; the
//!   required size (including the trailing NUL) is always reported.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rem_core::elevnet::ElevationModel;
use rem_core::evalkit::improvement_pct;
use rem_core::footprint::{footprint_report, FootprintScenario};
use rem_core::geodata::{AntennaPattern, DatasetStore, Tile, TransmitterSpec};
use rem_core::remnet::{predict_rem, RemMode, RemModel};
use rem_core::synthcity::{oracle_pathloss, OracleParams, SynthConfig};
use rem_core::Error;

pub const REM_OK: i32 = 0;
pub const REM_ERR_NULL_POINTER: i32 = 100;
pub const REM_ERR_UTF8: i32 = 101;
pub const REM_ERR_BUFFER_TOO_SMALL: i32 = 102;
pub const REM_ERR_PANIC: i32 = 103;

pub const REM_PATTERN_OMNI: i32 = 0;
pub const REM_PATTERN_SECTOR: i32 = 1;

pub const REM_MODE_IMAGE_ONLY: i32 = 0;
pub const REM_MODE_PREDICTED_NDSM: i32 = 1;
pub const REM_MODE_TRUE_NDSM: i32 = 2;

/// Opened dataset directory.
pub struct RemDataset {
    store: DatasetStore,
    ids: Vec<String>,
    oracle: OracleParams,
}

/// Frozen Stage-1 elevation model.
pub struct RemElevationModel {
    model: ElevationModel,
}

/// Stage-2 pathloss model.
pub struct RemPathlossModel {
    model: RemModel,
}

/// Transmitter description; `theta_3db_deg` and `a_max_db` are ignored for
/// omnidirectional patterns.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RemTransmitter {
    pub x: f64,
    pub y: f64,
    pub height_m: f64,
    pub azimuth_deg: f64,
    /// `REM_PATTERN_OMNI` or `REM_PATTERN_SECTOR`.
    pub pattern: i32,
    pub g_max_db: f64,
    pub theta_3db_deg: f64,
    pub a_max_db: f64,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn failure(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F>(f: F) -> i32
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            REM_OK
        }
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.code
        }
        Err(_) => {
            set_last_error("internal panic");
            REM_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(failure(REM_ERR_NULL_POINTER, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| failure(REM_ERR_UTF8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| failure(REM_ERR_NULL_POINTER, format!("{name} is NULL")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| failure(REM_ERR_NULL_POINTER, format!("{name} is NULL")))
}

unsafe fn grid_out<'a>(p: *mut f32, len: usize, needed: usize) -> Result<&'a mut [f32], Failure> {
    if p.is_null() {
        return Err(failure(REM_ERR_NULL_POINTER, "output buffer is NULL"));
    }
    if len < needed {
        return Err(failure(
            REM_ERR_BUFFER_TOO_SMALL,
            format!("output buffer holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_string(s: &str, buf: *mut c_char, buf_len: usize, needed: *mut usize) -> Result<(), Failure> {
    let bytes = s.as_bytes();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len() + 1;
    }
    if buf.is_null() || buf_len < bytes.len() + 1 {
        return Err(failure(
            REM_ERR_BUFFER_TOO_SMALL,
            format!("string needs {} bytes", bytes.len() + 1),
        ));
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

fn transmitter(tx: &RemTransmitter) -> Result<TransmitterSpec, Failure> {
    let pattern = match tx.pattern {
        REM_PATTERN_OMNI => AntennaPattern::Omni { g_max_db: tx.g_max_db },
        REM_PATTERN_SECTOR => AntennaPattern::Sector {
            g_max_db: tx.g_max_db,
            theta_3db_deg: tx.theta_3db_deg,
            a_max_db: tx.a_max_db,
        },
        other => {
            return Err(Error::InvalidArgument(format!("unknown antenna pattern {other}")).into())
        }
    };
    Ok(TransmitterSpec {
        x: tx.x,
        y: tx.y,
        height_m: tx.height_m,
        azimuth_deg: tx.azimuth_deg,
        pattern,
    })
}

impl RemDataset {
    fn tile(&self, id: &str) -> Result<Tile, Failure> {
        if !self.ids.iter().any(|k| k == id) {
            return Err(Error::InvalidArgument(format!("unknown tile {id:?}")).into());
        }
        Ok(self.store.load_tile(id)?)
    }
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rem_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opens a dataset directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rem_dataset_open(path: *const c_char, out: *mut *mut RemDataset) -> i32 {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let store = DatasetStore::open(path)?;
        let ids = store.tile_ids()?;
        let oracle = store
            .info()
            .generator
            .as_ref()
            .and_then(|g| serde_json::from_value::<SynthConfig>(g.clone()).ok())
            .map(|c| c.oracle)
            .unwrap_or_default();
        *out = Box::into_raw(Box::new(RemDataset { store, ids, oracle }));
        Ok(())
    })
}

/// Releases a dataset; NULL is ignored.
///
/// # Safety
/// `ds` must come from [`rem_dataset_open`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rem_dataset_free(ds: *mut RemDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of tiles in the dataset.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rem_dataset_tile_count(ds: *const RemDataset, out: *mut usize) -> i32 {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ds, "dataset")?.ids.len();
        Ok(())
    })
}

/// Copies the id of tile `index` (sorted order) into `buf`.
///
/// # Safety
/// `ds` must be a live handle; `buf` must hold `buf_len` bytes; `needed`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rem_dataset_tile_id(
    ds: *const RemDataset,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let id = ds.ids.get(index).ok_or_else(|| {
            Failure::from(Error::InvalidArgument(format!(
                "tile index {index} out of range ({} tiles)",
                ds.ids.len()
            )))
        })?;
        write_string(id, buf, buf_len, needed)
    })
}

/// Edge length in pixels and in meters of a tile.
///
/// # Safety
/// `ds` must be a live handle, `tile_id` NUL-terminated, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rem_dataset_tile_size(
    ds: *const RemDataset,
    tile_id: *const c_char,
    out_px: *mut usize,
    out_extent_m: *mut f64,
) -> i32 {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let tile = ds.tile(str_arg(tile_id, "tile_id")?)?;
        *out_arg(out_px, "out_px")? = tile.size_px();
        *out_arg(out_extent_m, "out_extent_m")? = tile.extent_m();
        Ok(())
    })
}

/// Oracle pathloss (normalised to `[0, 1]`) for a transmitter on a tile.
///
/// # Safety
/// `ds` must be a live handle, `tile_id` NUL-terminated, `tx` readable and
/// `out` writable for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn rem_oracle_pathloss(
    ds: *const RemDataset,
    tile_id: *const c_char,
    tx: *const RemTransmitter,
    out: *mut f32,
    out_len: usize,
) -> i32 {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let tile = ds.tile(str_arg(tile_id, "tile_id")?)?;
        let tx = transmitter(ref_arg(tx, "tx")?)?;
        let n = tile.size_px();
        let out = grid_out(out, out_len, n * n)?;
        let map = oracle_pathloss(
            &tile.elevation,
            tile.resolution_m,
            &tx,
            &ds.oracle,
            &ds.store.normalization(),
        )?;
        out[..n * n].copy_from_slice(map.values.data());
        Ok(())
    })
}

/// Loads a Stage-1 checkpoint; the model is frozen on load.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rem_elevation_model_load(
    path: *const c_char,
    out: *mut *mut RemElevationModel,
) -> i32 {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let model = ElevationModel::load(Path::new(path))?.frozen();
        *out = Box::into_raw(Box::new(RemElevationModel { model }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`rem_elevation_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rem_elevation_model_free(m: *mut RemElevationModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Predicted heights in meters for a tile's image.
///
/// # Safety
/// Handles must be live, `tile_id` NUL-terminated and `out` writable for
/// `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn rem_elevation_predict(
    m: *const RemElevationModel,
    ds: *const RemDataset,
    tile_id: *const c_char,
    out: *mut f32,
    out_len: usize,
) -> i32 {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let ds = ref_arg(ds, "dataset")?;
        let tile = ds.tile(str_arg(tile_id, "tile_id")?)?;
        let n = tile.size_px();
        let out = grid_out(out, out_len, n * n)?;
        let e = m.model.predict(&tile.image)?;
        out[..n * n].copy_from_slice(e.heights.data());
        Ok(())
    })
}

/// Loads a Stage-2 checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rem_model_load(path: *const c_char, out: *mut *mut RemPathlossModel) -> i32 {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let model = RemModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(RemPathlossModel { model }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`rem_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rem_model_free(m: *mut RemPathlossModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Input configuration of a Stage-2 model as one of the `REM_MODE_*` values.
///
/// # Safety
/// `m` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rem_model_mode(m: *const RemPathlossModel, out: *mut i32) -> i32 {
    guard(|| {
        let m = ref_arg(m, "model")?;
        *out_arg(out, "out")? = match m.model.mode() {
            RemMode::ImageOnly => REM_MODE_IMAGE_ONLY,
            RemMode::PredictedNdsm => REM_MODE_PREDICTED_NDSM,
            RemMode::TrueNdsm => REM_MODE_TRUE_NDSM,
        };
        Ok(())
    })
}

/// Staged prediction: Stage 1 when the model needs it, then Stage 2.
/// `elev` may be NULL unless the model uses predicted elevation.
///
/// # Safety
/// Handles must be live (or `elev` NULL), `tile_id` NUL-terminated, `tx`
/// readable and `out` writable for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn rem_predict(
    m: *const RemPathlossModel,
    elev: *const RemElevationModel,
    ds: *const RemDataset,
    tile_id: *const c_char,
    tx: *const RemTransmitter,
    out: *mut f32,
    out_len: usize,
) -> i32 {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let elev = elev.as_ref().map(|e| &e.model);
        let ds = ref_arg(ds, "dataset")?;
        let tile = ds.tile(str_arg(tile_id, "tile_id")?)?;
        let tx = transmitter(ref_arg(tx, "tx")?)?;
        let n = tile.size_px();
        let out = grid_out(out, out_len, n * n)?;
        let map = predict_rem(&tile, &tx, &m.model, elev)?;
        out[..n * n].copy_from_slice(map.values.data());
        Ok(())
    })
}

/// Relative RMSE improvement of `rmse_new` over `rmse_baseline`, percent.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rem_improvement_pct(rmse_baseline: f64, rmse_new: f64, out: *mut f64) -> i32 {
    guard(|| {
        *out_arg(out, "out")? = improvement_pct(rmse_baseline, rmse_new)?;
        Ok(())
    })
}

/// Footprint report as JSON. `scenario_json` is a complete scenario or NULL
/// for the defaults.
///
/// # Safety
/// `scenario_json` must be NULL or NUL-terminated; `buf` must hold
/// `buf_len` bytes; `needed` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rem_footprint_report_json(
    scenario_json: *const c_char,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let scenario = if scenario_json.is_null() {
            FootprintScenario::default()
        } else {
            let raw: serde_json::Value = serde_json::from_str(str_arg(scenario_json, "scenario_json")?)
                .map_err(|e| Failure::from(Error::InvalidArgument(format!("scenario JSON: {e}"))))?;
            FootprintScenario::from_json(&raw)?
        };
        let report = footprint_report(&scenario)?;
        let json = serde_json::to_string(&report).expect("report serialises");
        write_string(&json, buf, buf_len, needed)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn last_error() -> String {
        let p = rem_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn null_arguments_are_reported_not_dereferenced() {
        let mut out = 0.0;
        assert_eq!(unsafe { rem_improvement_pct(1.0, 0.5, ptr::null_mut()) }, REM_ERR_NULL_POINTER);
        assert!(last_error().contains("out"));
        assert_eq!(unsafe { rem_improvement_pct(0.0942, 0.0901, &mut out) }, REM_OK);
        assert!(rem_last_error_message().is_null());
        assert!((out - 4.352).abs() < 1e-3);
    }

    #[test]
    fn core_error_codes_pass_through() {
        let mut out = 0.0;
        let code = unsafe { rem_improvement_pct(0.0, 0.5, &mut out) };
        assert_eq!(code, Error::InvalidArgument(String::new()).code());
        let mut ds = ptr::null_mut();
        let path = CString::new("/nonexistent/dataset").unwrap();
        let code = unsafe { rem_dataset_open(path.as_ptr(), &mut ds) };
        assert_eq!(code, Error::MissingFile(Default::default()).code());
        assert!(ds.is_null());
    }

    #[test]
    fn footprint_json_reports_required_size() {
        let mut needed = 0usize;
        let code = unsafe { rem_footprint_report_json(ptr::null(), ptr::null_mut(), 0, &mut needed) };
        assert_eq!(code, REM_ERR_BUFFER_TOO_SMALL);
        let mut buf = vec![0 as c_char; needed];
        let code = unsafe { rem_footprint_report_json(ptr::null(), buf.as_mut_ptr(), needed, &mut needed) };
        assert_eq!(code, REM_OK);
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        let v: serde_json::Value = serde_json::from_str(s).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    }

    #[test]
    fn incomplete_scenarios_are_rejected() {
        let json = CString::new(r#"{"area_km2": 1.0}"#).unwrap();
        let mut needed = 0usize;
        let code = unsafe { rem_footprint_report_json(json.as_ptr(), ptr::null_mut(), 0, &mut needed) };
        assert_eq!(code, Error::IncompleteScenario(vec![]).code());
        assert!(last_error().contains("missing"));
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(rem_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
