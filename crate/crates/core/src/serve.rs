//! HTTP inference service over a dataset and a directory of checkpoints.
//!
//! Checkpoints are loaded once at startup; every handler is a pure function
//! of (models, dataset, request). Grids travel as base64-wrapped raw
//! little-endian `f32` payloads in the dataset's raw grid format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use crate::elevnet::ElevationModel;
use crate::error::{Error, Result};
use crate::geodata::io::{decode_raw_grid, encode_png, encode_raw_grid};
use crate::geodata::{
    DatasetStore, ElevationSource, Grid, PathlossNormalization,
    RgbImage, Tile, TransmitterSpec,
};
use crate::remnet::{assemble_inputs, predict_rem, Channel, RemArch, RemMode, RemModel};
use crate::synthcity::{oracle_pathloss, OracleParams, SynthConfig};

/// Longest side of a tile thumbnail in pixels.
pub const THUMBNAIL_PX: usize = 64;

/// One checkpoint found in the models directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub file: String,
    pub kind: String,
    pub arch: Option<RemArch>,
    pub mode: Option<RemMode>,
    pub layout: Vec<Channel>,
    pub params_sha256: String,
    pub elevation_sha256: Option<String>,
}

/// Read-only state shared by every request.
pub struct ServeState {
    store: DatasetStore,
    oracle: OracleParams,
    elevation: Option<ElevationModel>,
    rem: BTreeMap<(RemMode, RemArch), RemModel>,
    models: Vec<ModelInfo>,
}

impl ServeState {
    /// Opens the dataset and loads every `*.ckpt` in `models_dir` (which may
    /// be absent, leaving only the oracle).
    pub fn load(data_dir: &Path, models_dir: Option<&Path>) -> Result<Self> {
        let store = DatasetStore::open(data_dir)?;
        let oracle = store
            .info()
            .generator
            .as_ref()
            .and_then(|g| serde_json::from_value::<SynthConfig>(g.clone()).ok())
            .map(|c| c.oracle)
            .unwrap_or_default();
        let mut state = Self {
            store,
            oracle,
            elevation: None,
            rem: BTreeMap::new(),
            models: Vec::new(),
        };
        if let Some(dir) = models_dir {
            for path in checkpoint_files(dir)? {
                state.add_checkpoint(&path)?;
            }
        }
        Ok(state)
    }

    fn add_checkpoint(&mut self, path: &Path) -> Result<()> {
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        // the kind lives in the header; try the Stage-2 reader first
        match RemModel::load(path) {
            Ok(m) => {
                self.models.push(ModelInfo {
                    file,
                    kind: "rem".into(),
                    arch: Some(m.arch()),
                    mode: Some(m.mode()),
                    layout: m.layout().to_vec(),
                    params_sha256: m.params_sha256(),
                    elevation_sha256: m.elevation_sha256().map(str::to_string),
                });
                let key = (m.mode(), m.arch());
                if self.rem.insert(key, m).is_some() {
                    return Err(Error::invalid(format!(
                        "more than one {} {} checkpoint in the models directory",
                        key.1, key.0
                    )));
                }
                Ok(())
            }
            Err(Error::MalformedHeader { .. }) => {
                let m = ElevationModel::load(path)?.frozen();
                if self.elevation.is_some() {
                    return Err(Error::invalid(
                        "more than one elevation checkpoint in the models directory",
                    ));
                }
                self.models.push(ModelInfo {
                    file,
                    kind: "elevation".into(),
                    arch: None,
                    mode: None,
                    layout: vec![Channel::Red, Channel::Green, Channel::Blue],
                    params_sha256: m.params_sha256(),
                    elevation_sha256: None,
                });
                self.elevation = Some(m);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    pub fn models(&self) -> &[ModelInfo] {
        &self.models
    }

    pub fn store(&self) -> &DatasetStore {
        &self.store
    }

    /// The model that answers `mode` (and `arch`, when given).
    fn rem_model(&self, mode: RemMode, arch: Option<RemArch>) -> Option<&RemModel> {
        self.rem
            .iter()
            .find(|((m, a), _)| *m == mode && arch.map_or(true, |want| want == *a))
            .map(|(_, model)| model)
    }
}

fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    Ok(files)
}

/// Requested configuration: a trained mode or the oracle test hook.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestMode {
    Model(RemMode),
    Oracle,
}

impl std::str::FromStr for RequestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            Ok(RequestMode::Oracle)
        } else {
            s.parse().map(RequestMode::Model)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub tile_id: String,
    pub tx: TransmitterSpec,
    pub mode: String,
    #[serde(default)]
    pub arch: Option<String>,
    #[serde(default)]
    pub include_oracle: bool,
}

/// A grid as base64 of the raw grid format, with its shape repeated for
/// convenience.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPayload {
    pub shape: [usize; 2],
    pub encoding: String,
    pub data: String,
}

pub const GRID_ENCODING: &str = "ndsm-f32le-base64";

impl GridPayload {
    pub fn encode(grid: &Grid<f32>) -> Self {
        Self {
            shape: [grid.height(), grid.width()],
            encoding: GRID_ENCODING.into(),
            data: B64.encode(encode_raw_grid(grid)),
        }
    }

    pub fn decode(&self) -> Result<Grid<f32>> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::invalid(format!("bad base64 grid payload: {e}")))?;
        decode_raw_grid(&bytes, Path::new("<payload>"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse_vs_oracle_db: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElevationUsed {
    None,
    Predicted,
    True,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub tile_id: String,
    pub mode: String,
    pub arch: Option<RemArch>,
    pub rem: GridPayload,
    pub stats: PredictStats,
    pub elevation_used: ElevationUsed,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackResponse {
    pub layout: Vec<Channel>,
    /// `[channels, height, width]`.
    pub shape: [usize; 3],
    /// base64 of the channel-major little-endian `f32` values.
    pub data: String,
    /// `(row, col)` of the transmitter one-hot maximum.
    pub tx_onehot_argmax: [usize; 2],
}

/// HTTP error with a JSON body `{"error": ..., "status": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            Error::MissingFile(_) => StatusCode::NOT_FOUND,
            Error::Contract(_) | Error::LayoutMismatch { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.message, "status": self.status.as_u16()});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

/// Router with every endpoint; `cors_origin` of `None` allows any origin.
pub fn router(state: Arc<ServeState>, cors_origin: Option<&str>) -> Result<Router> {
    let cors = match cors_origin {
        None | Some("*") => CorsLayer::new().allow_origin(Any),
        Some(o) => CorsLayer::new().allow_origin(
            o.parse::<HeaderValue>()
                .map_err(|_| Error::invalid(format!("bad CORS origin {o:?}")))?,
        ),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Ok(Router::new()
        .route("/tiles", get(list_tiles))
        .route("/tiles/:id", get(get_tile))
        .route("/models", get(list_models))
        .route("/predict", post(predict))
        .route("/debug/stack", post(debug_stack))
        .layer(cors)
        .with_state(state))
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<ServeState>, addr: &str, cors_origin: Option<&str>) -> Result<()> {
    let app = router(state, cors_origin)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(PathBuf::from(addr), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(PathBuf::from(addr), e))
}

/// Runs blocking compute off the async workers.
async fn blocking<T, F>(f: F) -> std::result::Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> std::result::Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn load_tile(state: &ServeState, id: &str) -> std::result::Result<Tile, ApiError> {
    let known = state.store.tile_ids().map_err(ApiError::from)?;
    if !known.iter().any(|k| k == id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown tile {id:?}")));
    }
    state.store.load_tile(id).map_err(ApiError::from)
}

fn thumbnail(image: &RgbImage) -> RgbImage {
    let (h, w) = image.shape();
    let step = h.max(w).div_ceil(THUMBNAIL_PX).max(1);
    let (th, tw) = (h.div_ceil(step), w.div_ceil(step));
    let mut out = RgbImage::filled(th, tw, [0, 0, 0]);
    for r in 0..th {
        for c in 0..tw {
            out.put_pixel(r, c, image.pixel(r * step, c * step));
        }
    }
    out
}

#[derive(Serialize)]
struct TileEntry {
    id: String,
    thumbnail_png: String,
}

async fn list_tiles(State(state): State<Arc<ServeState>>) -> ApiResult<serde_json::Value> {
    let tiles = blocking(move || {
        let ids = state.store.tile_ids()?;
        ids.into_iter()
            .map(|id| {
                let tile = state.store.load_tile(&id)?;
                let png = encode_png(&thumbnail(&tile.image))?;
                Ok(TileEntry {
                    id,
                    thumbnail_png: B64.encode(png),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(json!({ "tiles": tiles })))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileResponse {
    pub id: String,
    pub size_px: usize,
    pub resolution_m: f64,
    pub extent_m: f64,
    pub origin: [f64; 2],
    pub h_max: f32,
    pub normalization: PathlossNormalization,
    pub image_png: String,
    pub elevation_source: ElevationSource,
    pub elevation: GridPayload,
    pub transmitters: Vec<TransmitterSpec>,
}

async fn get_tile(
    State(state): State<Arc<ServeState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<TileResponse> {
    blocking(move || {
        let tile = load_tile(&state, &id)?;
        let transmitters = state
            .store
            .sample_indices(&id)?
            .into_iter()
            .map(|k| state.store.load_transmitter(&id, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Json(TileResponse {
            id: tile.id.clone(),
            size_px: tile.size_px(),
            resolution_m: tile.resolution_m,
            extent_m: tile.extent_m(),
            origin: [tile.origin.0, tile.origin.1],
            h_max: tile.elevation.h_max,
            normalization: state.store.normalization(),
            image_png: B64.encode(encode_png(&tile.image)?),
            elevation_source: tile.elevation.source,
            elevation: GridPayload::encode(&tile.elevation.heights),
            transmitters,
        }))
    })
    .await
}

async fn list_models(State(state): State<Arc<ServeState>>) -> Json<serde_json::Value> {
    Json(json!({ "models": state.models() }))
}

/// Parses and validates a request body, mapping every client mistake onto
/// the documented status codes.
fn parse_request(
    state: &ServeState,
    body: &[u8],
) -> std::result::Result<(PredictRequest, RequestMode, Option<RemArch>, Tile), ApiError> {
    let req: PredictRequest = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request: {e}")))?;
    let mode: RequestMode = req
        .mode
        .parse()
        .map_err(|e: Error| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let arch = req
        .arch
        .as_deref()
        .map(str::parse::<RemArch>)
        .transpose()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let tx = &req.tx;
    if !(tx.x.is_finite() && tx.y.is_finite()) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "transmitter position must be finite"));
    }
    let tile = load_tile(state, &req.tile_id)?;
    let extent = tile.extent_m();
    if !(tx.x >= 0.0 && tx.x < extent && tx.y >= 0.0 && tx.y < extent) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("transmitter ({}, {}) outside tile extent {extent} m", tx.x, tx.y),
        ));
    }
    tx.validate(extent)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok((req, mode, arch, tile))
}

fn not_loaded(what: String) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, format!("no model loaded for {what}"))
}

/// Answers one prediction request synchronously.
pub fn handle_predict(state: &ServeState, body: &[u8]) -> std::result::Result<PredictResponse, ApiError> {
    let t0 = Instant::now();
    let (req, mode, arch, tile) = parse_request(state, body)?;
    let norm = state.store.normalization();
    let oracle = || oracle_pathloss(&tile.elevation, tile.resolution_m, &req.tx, &state.oracle, &norm);
    let (rem, used_arch, elevation_used) = match mode {
        RequestMode::Oracle => (oracle()?, None, ElevationUsed::True),
        RequestMode::Model(m) => {
            let model = state
                .rem_model(m, arch)
                .ok_or_else(|| not_loaded(format!("mode {m}")))?;
            let used = match m {
                RemMode::ImageOnly => ElevationUsed::None,
                RemMode::TrueNdsm => ElevationUsed::True,
                RemMode::PredictedNdsm => {
                    if state.elevation.is_none() {
                        return Err(not_loaded("Stage-1 elevation".into()));
                    }
                    ElevationUsed::Predicted
                }
            };
            (
                predict_rem(&tile, &req.tx, model, state.elevation.as_ref())?,
                Some(model.arch()),
                used,
            )
        }
    };
    let values = rem.values.data();
    let (min, max, sum) = values.iter().fold((f64::MAX, f64::MIN, 0.0), |(lo, hi, s), v| {
        let v = *v as f64;
        (lo.min(v), hi.max(v), s + v)
    });
    let rmse_vs_oracle_db = if req.include_oracle {
        let truth = oracle()?;
        let sq: f64 = values
            .iter()
            .zip(truth.values.data())
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum();
        Some(norm.error_to_db((sq / values.len() as f64).sqrt()))
    } else {
        None
    };
    Ok(PredictResponse {
        tile_id: req.tile_id,
        mode: match mode {
            RequestMode::Oracle => "oracle".into(),
            RequestMode::Model(m) => m.to_string(),
        },
        arch: used_arch,
        rem: GridPayload::encode(&rem.values),
        stats: PredictStats {
            min,
            max,
            mean: sum / values.len() as f64,
            rmse_vs_oracle_db,
        },
        elevation_used,
        latency_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

async fn predict(State(state): State<Arc<ServeState>>, body: Bytes) -> ApiResult<PredictResponse> {
    blocking(move || handle_predict(&state, &body).map(Json)).await
}

/// Assembles (without predicting) the input stack a request would use.
pub fn handle_debug_stack(state: &ServeState, body: &[u8]) -> std::result::Result<StackResponse, ApiError> {
    let (req, mode, _, tile) = parse_request(state, body)?;
    let RequestMode::Model(m) = mode else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "the oracle has no input stack"));
    };
    if m == RemMode::PredictedNdsm && state.elevation.is_none() {
        return Err(not_loaded("Stage-1 elevation".into()));
    }
    let params = state
        .rem_model(m, None)
        .map(|model| *model.stack_params())
        .unwrap_or_default();
    let stack = assemble_inputs(&tile, &req.tx, m, state.elevation.as_ref(), &params)?;
    let onehot = stack.channel(Channel::TxOnehot).expect("every layout has a one-hot");
    let n = tile.size_px();
    let hot = onehot
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > onehot[best] { i } else { best });
    let bytes: Vec<u8> = stack.tensor.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let (c, h, w) = stack.tensor.shape();
    Ok(StackResponse {
        layout: stack.layout,
        shape: [c, h, w],
        data: B64.encode(bytes),
        tx_onehot_argmax: [hot / n, hot % n],
    })
}

async fn debug_stack(State(state): State<Arc<ServeState>>, body: Bytes) -> ApiResult<StackResponse> {
    blocking(move || handle_debug_stack(&state, &body).map(Json)).await
}
