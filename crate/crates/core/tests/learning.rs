//! Overfit sanity checks: both stages can memorise a micro-set.

use rem_core::elevnet::{
    default_elev_arch, elevation_mae_m, load_elev_samples, train_elevation, AugmentConfig,
    ElevTrainConfig, ElevationModel,
};
use rem_core::geodata::DatasetStore;
use rem_core::nn::LrSchedule;
use rem_core::remnet::{
    load_rem_samples, rmse_over, train_rem, RemArch, RemMode, RemModel, RemTrainConfig,
    StackParams,
};
use rem_core::synthcity::{generate_dataset, SynthConfig};

fn micro_set(tiles: usize, seed: u64, px: usize) -> (tempfile::TempDir, DatasetStore, Vec<String>) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { tiles, seed, tile_size_px: px, tx_per_tile: 2, ..Default::default() };
    let (store, _) = generate_dataset(dir.path(), &cfg).unwrap();
    let ids = store.tile_ids().unwrap();
    (dir, store, ids)
}

#[test]
fn stage1_memorises_ten_tiles() {
    let (_dir, store, ids) = micro_set(10, 11, 64);
    let train = load_elev_samples(&store, &ids).unwrap();
    let cfg = ElevTrainConfig {
        epochs: 60,
        batch_size: 2,
        learning_rate: 2e-3,
        seed: 0,
        augmentation: AugmentConfig { scale_range: (1.0, 1.0), symmetry: false },
        ..Default::default()
    };
    let mut model = ElevationModel::new(default_elev_arch(), store.info().h_max, 0).unwrap();
    let log = train_elevation(&mut model, &train, &[], &cfg).unwrap();
    let first = log[0].train_loss;
    let last = log.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    let mae = elevation_mae_m(&model, &train).unwrap();
    assert!(mae < 0.5, "train MAE {mae} m");
}

fn stage2_overfit(cfg: &RemTrainConfig) -> (Vec<f64>, f64) {
    let (_dir, store, ids) = micro_set(5, 12, 64);
    let params = StackParams::default();
    let train = load_rem_samples(&store, &ids, RemMode::TrueNdsm, None, &params).unwrap();
    assert_eq!(train.len(), 10);
    let mut model = RemModel::new(
        RemArch::LitRadioUNet,
        RemMode::TrueNdsm,
        cfg.base_width,
        params,
        store.normalization(),
        cfg.seed,
    )
    .unwrap();
    let log = train_rem(&mut model, &train, &[], cfg).unwrap();
    let losses = log.iter().map(|e| e.train_rmse * e.train_rmse).collect();
    (losses, rmse_over(&model, &train).unwrap())
}

#[test]
fn stage2_loss_halves_on_five_tiles() {
    let cfg = RemTrainConfig {
        epochs: 40,
        batch_size: 2,
        learning_rate: 2e-3,
        seed: 0,
        base_width: 8,
        ..Default::default()
    };
    let (losses, rmse) = stage2_overfit(&cfg);
    let first = losses[0];
    let last = *losses.last().unwrap();
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    assert!(rmse < first.sqrt(), "train RMSE {rmse}");
}

/// Near-memorisation of 5 tiles × 2 transmitters. Takes about 8 minutes on
/// one core and currently ends at ≈0.026: the per-cell 15 dB obstruction
/// steps along each ray leave jagged shadow edges that the net only
/// partially memorises. Kept at the target threshold.
#[test]
#[ignore = "slow; measured train RMSE ≈0.026 against the 0.02 target"]
fn stage2_memorises_five_tiles() {
    let cfg = RemTrainConfig {
        epochs: 300,
        batch_size: 1,
        learning_rate: 1e-3,
        lr_schedule: LrSchedule::Cosine,
        seed: 0,
        base_width: 16,
        ..Default::default()
    };
    let (_, rmse) = stage2_overfit(&cfg);
    assert!(rmse < 0.02, "train RMSE {rmse}");
}
