//! HTTP service checks through the router, without binding a socket.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use rem_core::elevnet::{default_elev_arch, ElevationModel};
use rem_core::geodata::{AntennaPattern, DatasetStore, TransmitterSpec};
use rem_core::remnet::{predict_rem, RemArch, RemMode, RemModel, StackParams};
use rem_core::serve::{router, GridPayload, PredictResponse, ServeState, StackResponse};
use rem_core::synthcity::{generate_dataset, SynthConfig};

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<ServeState>,
    image: RemModel,
    pred: RemModel,
    elev: ElevationModel,
}

/// Tiny dataset with untrained image-only and predicted-nDSM models and a
/// frozen Stage-1 model; no true-nDSM model is loaded.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = SynthConfig { tiles: 6, seed: 2, tile_size_px: 16, ..Default::default() };
    let (store, _) = generate_dataset(&data, &cfg).unwrap();
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    let elev = ElevationModel::new(default_elev_arch(), store.info().h_max, 1).unwrap().frozen();
    elev.save(&models.join("elev.ckpt")).unwrap();
    let norm = store.normalization();
    let image =
        RemModel::new(RemArch::LitRadioUNet, RemMode::ImageOnly, 2, StackParams::default(), norm, 3)
            .unwrap();
    image.save(&models.join("rem_image.ckpt")).unwrap();
    let mut pred = RemModel::new(
        RemArch::LitRadioUNet,
        RemMode::PredictedNdsm,
        2,
        StackParams::default(),
        norm,
        4,
    )
    .unwrap();
    pred.set_elevation_sha256(Some(elev.params_sha256()));
    pred.save(&models.join("rem_pred.ckpt")).unwrap();
    let state = Arc::new(ServeState::load(&data, Some(&models)).unwrap());
    Fixture {
        _dir: dir,
        state,
        image,
        pred,
        elev,
    }
}

fn omni(x: f64, y: f64) -> TransmitterSpec {
    TransmitterSpec {
        x,
        y,
        height_m: 20.0,
        azimuth_deg: 0.0,
        pattern: AntennaPattern::Omni { g_max_db: 0.0 },
    }
}

async fn call(state: &Arc<ServeState>, req: Request<Body>) -> (StatusCode, Value) {
    let app = router(state.clone(), Some("http://localhost:5173")).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn get(state: &Arc<ServeState>, uri: &str) -> (StatusCode, Value) {
    call(state, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(state: &Arc<ServeState>, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(state, req).await
}

fn predict_body(tile: &str, tx: &TransmitterSpec, mode: &str) -> Value {
    json!({"tile_id": tile, "tx": tx, "mode": mode})
}

fn first_tile(state: &ServeState) -> String {
    state.store().tile_ids().unwrap()[0].clone()
}

#[tokio::test]
async fn tiles_and_models_are_listed() {
    let f = fixture();
    let (status, body) = get(&f.state, "/tiles").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tiles"].as_array().unwrap().len(), 6);
    assert!(!body["tiles"][0]["thumbnail_png"].as_str().unwrap().is_empty());

    let id = first_tile(&f.state);
    let (status, tile) = get(&f.state, &format!("/tiles/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tile["size_px"], 16);
    let grid: GridPayload = serde_json::from_value(tile["elevation"].clone()).unwrap();
    let store_tile = f.state.store().load_tile(&id).unwrap();
    assert_eq!(grid.decode().unwrap(), store_tile.elevation.heights);
    assert_eq!(tile["transmitters"].as_array().unwrap().len(), 2);

    let (status, err) = get(&f.state, "/tiles/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["status"], 404);

    let (_, models) = get(&f.state, "/models").await;
    let kinds: Vec<&str> =
        models["models"].as_array().unwrap().iter().map(|m| m["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["elevation", "rem", "rem"]);
}

#[tokio::test]
async fn request_errors_map_to_status_codes() {
    let f = fixture();
    let id = first_tile(&f.state);
    let inside = omni(100.0, 100.0);
    let cases = [
        (predict_body(&id, &inside, "sideways"), StatusCode::BAD_REQUEST),
        (json!({"tile_id": id}), StatusCode::BAD_REQUEST),
        (
            predict_body(&id, &TransmitterSpec { height_m: -1.0, ..inside }, "image"),
            StatusCode::BAD_REQUEST,
        ),
        (predict_body("nope", &inside, "image"), StatusCode::NOT_FOUND),
        (predict_body(&id, &inside, "true"), StatusCode::CONFLICT),
        (predict_body(&id, &omni(300.0, 10.0), "image"), StatusCode::UNPROCESSABLE_ENTITY),
        (predict_body(&id, &omni(-1.0, 10.0), "oracle"), StatusCode::UNPROCESSABLE_ENTITY),
    ];
    for (body, want) in cases {
        let (status, err) = post(&f.state, "/predict", body.clone()).await;
        assert_eq!(status, want, "{body}");
        assert_eq!(err["status"], want.as_u16());
        assert!(err["error"].is_string());
    }
    let mut unknown_arch = predict_body(&id, &inside, "image");
    unknown_arch["arch"] = json!("resnet");
    assert_eq!(post(&f.state, "/predict", unknown_arch).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oracle_mode_scores_zero_against_itself() {
    let f = fixture();
    let id = first_tile(&f.state);
    let mut body = predict_body(&id, &omni(60.0, 200.0), "oracle");
    body["include_oracle"] = json!(true);
    let (status, resp) = post(&f.state, "/predict", body).await;
    assert_eq!(status, StatusCode::OK);
    let resp: PredictResponse = serde_json::from_value(resp).unwrap();
    assert_eq!(resp.stats.rmse_vs_oracle_db, Some(0.0));
    assert!(resp.stats.min <= resp.stats.mean && resp.stats.mean <= resp.stats.max);
}

#[tokio::test]
async fn predictions_match_the_library_bit_for_bit() {
    let f = fixture();
    let id = first_tile(&f.state);
    let tile = f.state.store().load_tile(&id).unwrap();
    for (k, (mode, model)) in [("image", &f.image), ("pred", &f.pred)].into_iter().enumerate() {
        let tx = omni(30.0 + 50.0 * k as f64, 90.0);
        let body = predict_body(&id, &tx, mode);
        let (status, a) = post(&f.state, "/predict", body.clone()).await;
        assert_eq!(status, StatusCode::OK, "{a}");
        let (_, b) = post(&f.state, "/predict", body).await;
        assert_eq!(a["rem"], b["rem"]);
        let served: GridPayload = serde_json::from_value(a["rem"].clone()).unwrap();
        let direct = predict_rem(&tile, &tx, model, Some(&f.elev)).unwrap();
        assert_eq!(served.decode().unwrap(), direct.values);
    }
    let (_, resp) = post(&f.state, "/predict", predict_body(&id, &omni(10.0, 10.0), "pred")).await;
    assert_eq!(resp["elevation_used"], "predicted");
    assert_eq!(resp["arch"], "litradiounet");
}

#[tokio::test]
async fn debug_stack_tracks_the_transmitter_pixel() {
    let f = fixture();
    let id = first_tile(&f.state);
    let res = f.state.store().load_tile(&id).unwrap().resolution_m;
    let stack = |tx: TransmitterSpec| {
        let state = f.state.clone();
        let id = id.clone();
        async move {
            let (status, v) = post(&state, "/debug/stack", predict_body(&id, &tx, "image")).await;
            assert_eq!(status, StatusCode::OK, "{v}");
            serde_json::from_value::<StackResponse>(v).unwrap()
        }
    };
    let a = stack(omni(5.5 * res, 3.5 * res)).await;
    let b = stack(omni(6.5 * res, 3.5 * res)).await;
    assert_eq!(a.tx_onehot_argmax, [3, 5]);
    assert_eq!(b.tx_onehot_argmax, [3, 6]);
    assert_eq!(a.shape, [6, 16, 16]);
    let (status, _) =
        post(&f.state, "/debug/stack", predict_body(&id, &omni(5.0, 5.0), "oracle")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn cors_allows_the_configured_origin() {
    let f = fixture();
    let app = router(f.state.clone(), Some("http://localhost:5173")).unwrap();
    let req = Request::get("/models")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
    assert!(router(f.state.clone(), Some("bad\norigin")).is_err());
}

#[test]
fn missing_stage1_model_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = SynthConfig { tiles: 4, seed: 1, tile_size_px: 16, ..Default::default() };
    generate_dataset(&data, &cfg).unwrap();
    let store = DatasetStore::open(&data).unwrap();
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    RemModel::new(
        RemArch::LitRadioUNet,
        RemMode::PredictedNdsm,
        2,
        StackParams::default(),
        store.normalization(),
        0,
    )
    .unwrap()
    .save(&models.join("pred.ckpt"))
    .unwrap();
    let state = ServeState::load(&data, Some(&models)).unwrap();
    let id = state.store().tile_ids().unwrap()[0].clone();
    let body = predict_body(&id, &omni(50.0, 50.0), "pred").to_string();
    let err = rem_core::serve::handle_predict(&state, body.as_bytes()).unwrap_err();
    assert_eq!(err.status, StatusCode::CONFLICT);
}
