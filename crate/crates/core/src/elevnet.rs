//! Stage 1: image-to-elevation estimation with symmetry/scale augmentation
//! and a freezing contract.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{DatasetStore, ElevationMap, ElevationSource, Grid, RgbImage, Symmetry};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::{fit, Downsample, EpochRecord, FitConfig, Loss, LrSchedule, Tensor, UNet, UNetConfig};

/// Registered name of the Stage-1 architecture.
pub const ELEV_ARCH_NAME: &str = "im2ele-mini";
const ELEV_KIND: &str = "elevation";

/// Default Stage-1 network: a compact U-Net with squeeze-excitation in the
/// decoder.
pub fn default_elev_arch() -> UNetConfig {
    UNetConfig {
        in_channels: 3,
        base_width: 8,
        max_width: 32,
        depth: 3,
        convs_per_block: 2,
        downsample: Downsample::MaxPool,
        bottleneck_dilations: vec![1, 1],
        squeeze_excitation: true,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Multiplicative height factor range; `(1, 1)` disables scaling.
    pub scale_range: (f64, f64),
    /// Apply a random one of the eight square symmetries.
    pub symmetry: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_range: (0.75, 1.25),
            symmetry: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "scale range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElevTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub augmentation: AugmentConfig,
    pub loss: Loss,
}

impl Default for ElevTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 2e-3,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            augmentation: AugmentConfig::default(),
            loss: Loss::L1,
        }
    }
}

impl ElevTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        self.fit_config().validate()
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            schedule: self.lr_schedule,
            seed: self.seed,
            loss: self.loss,
        }
    }
}

/// Scales an RGB image into a `3 × H × W` tensor with values in `[0, 1]`.
pub fn image_tensor(image: &RgbImage) -> Tensor {
    let (h, w) = image.shape();
    let n = h * w;
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in image.as_raw().chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * n + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(3, h, w, data)
}

/// Applies `sym` to both grids and multiplies normalised heights by `scale`,
/// clipping back into `[0, 1]`. Colours are never perturbed.
pub fn augment_pair(
    image: &RgbImage,
    elevation: &Grid<f32>,
    sym: Symmetry,
    scale: f64,
) -> Result<(RgbImage, Grid<f32>)> {
    if image.shape() != elevation.shape() {
        return Err(Error::invalid(format!(
            "image {:?} and elevation {:?} shapes differ",
            image.shape(),
            elevation.shape()
        )));
    }
    if image.height() != image.width() {
        return Err(Error::invalid("square symmetries need square grids"));
    }
    let img = image.transformed(sym);
    let mut elev = elevation.transformed(sym);
    if scale != 1.0 {
        let s = scale as f32;
        for h in elev.data_mut() {
            *h = (*h * s).clamp(0.0, 1.0);
        }
    }
    Ok((img, elev))
}

/// Draws the symmetry and height scale for one augmentation from `seed`.
pub fn draw_augmentation(seed: u64, cfg: &AugmentConfig) -> (Symmetry, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sym = if cfg.symmetry {
        Symmetry::from_index(rng.gen_range(0..8))
    } else {
        Symmetry::IDENTITY
    };
    let (lo, hi) = cfg.scale_range;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    (sym, scale)
}

/// One Stage-1 training pair: an image and its true nDSM.
#[derive(Clone, Debug)]
pub struct ElevSample {
    pub image: RgbImage,
    pub elevation: ElevationMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ElevHeader {
    kind: String,
    arch_name: String,
    arch: UNetConfig,
    h_max: f32,
    frozen: bool,
    seed: u64,
}

/// Learned image-to-elevation estimator.
#[derive(Clone, Debug)]
pub struct ElevationModel {
    net: UNet,
    h_max: f32,
    frozen: bool,
    seed: u64,
}

impl ElevationModel {
    pub fn new(arch: UNetConfig, h_max: f32, seed: u64) -> Result<Self> {
        if arch.in_channels != 3 {
            return Err(Error::invalid("elevation model takes 3 image channels"));
        }
        if !(h_max > 0.0) {
            return Err(Error::invalid("h_max must be positive"));
        }
        Ok(Self {
            net: UNet::new(arch, seed)?,
            h_max,
            frozen: false,
            seed,
        })
    }

    pub fn h_max(&self) -> f32 {
        self.h_max
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn arch(&self) -> &UNetConfig {
        self.net.config()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the model as frozen; idempotent and leaves parameters untouched.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen(mut self) -> Self {
        self.freeze();
        self
    }

    /// SHA-256 of the parameter payload.
    pub fn params_sha256(&self) -> String {
        self.net.params().sha256()
    }

    /// Normalised heights in `[0, 1]` for `image`.
    pub fn predict_normalized(&self, image: &RgbImage) -> Result<Grid<f32>> {
        let (h, w) = image.shape();
        self.net.check_input(3, h, w)?;
        let out = self.net.predict(&image_tensor(image));
        Grid::from_vec(h, w, out.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Predicted nDSM in meters, clipped to `[0, h_max]`.
    pub fn predict(&self, image: &RgbImage) -> Result<ElevationMap> {
        let norm = self.predict_normalized(image)?;
        let h_max = self.h_max;
        ElevationMap::clipped(norm.map(|v| v * h_max), ElevationSource::Predicted, h_max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ElevHeader {
            kind: ELEV_KIND.into(),
            arch_name: ELEV_ARCH_NAME.into(),
            arch: self.net.config().clone(),
            h_max: self.h_max,
            frozen: self.frozen,
            seed: self.seed,
        };
        write_checkpoint(path, &header, &self.net.params().flatten())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params): (ElevHeader, Vec<f32>) = read_checkpoint(path)?;
        if header.kind != ELEV_KIND {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: format!("expected an elevation checkpoint, found kind {:?}", header.kind),
            });
        }
        let mut model = Self::new(header.arch, header.h_max, header.seed)?;
        if !model.net.params_mut().load_flat(&params) {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} parameters do not fit the recorded architecture",
                path.display(),
                params.len()
            )));
        }
        model.frozen = header.frozen;
        Ok(model)
    }
}

/// Loads the image/elevation pairs of `ids` from a dataset.
pub fn load_elev_samples(store: &DatasetStore, ids: &[String]) -> Result<Vec<ElevSample>> {
    ids.iter()
        .map(|id| {
            let tile = store.load_tile(id)?;
            Ok(ElevSample {
                image: tile.image,
                elevation: tile.elevation,
            })
        })
        .collect()
}

/// Mean absolute error in meters over `samples`.
pub fn elevation_mae_m(model: &ElevationModel, samples: &[ElevSample]) -> Result<f64> {
    use rayon::prelude::*;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no elevation samples".into()));
    }
    let per: Vec<(f64, usize)> = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(&s.image)?;
            let sum = pred
                .heights
                .data()
                .iter()
                .zip(s.elevation.heights.data())
                .map(|(p, t)| (*p as f64 - *t as f64).abs())
                .sum::<f64>();
            Ok((sum, pred.heights.data().len()))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = per
        .iter()
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + a, n + b));
    Ok(sum / n as f64)
}

/// MAE in meters of predicting the training-set mean height everywhere.
pub fn constant_mean_mae_m(train: &[ElevSample], eval: &[ElevSample]) -> Result<f64> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyDataset("no elevation samples".into()));
    }
    let mean = mean_height(train);
    let (sum, n) = eval.iter().fold((0.0, 0usize), |(s, n), e| {
        let d = e.elevation.heights.data();
        (s + d.iter().map(|h| (*h as f64 - mean).abs()).sum::<f64>(), n + d.len())
    });
    Ok(sum / n as f64)
}

fn mean_height(samples: &[ElevSample]) -> f64 {
    let (sum, n) = samples.iter().fold((0.0, 0usize), |(s, n), e| {
        let d = e.elevation.heights.data();
        (s + d.iter().map(|h| *h as f64).sum::<f64>(), n + d.len())
    });
    sum / n as f64
}

/// Trains `model` on `train`, logging validation MAE (meters) per epoch.
///
/// The output bias starts at the mean normalised training height, so epoch 0
/// already equals the constant-mean predictor up to the learned residual.
pub fn train_elevation(
    model: &mut ElevationModel,
    train: &[ElevSample],
    val: &[ElevSample],
    cfg: &ElevTrainConfig,
) -> Result<Vec<EpochRecord>> {
    if model.frozen {
        return Err(Error::FrozenModel);
    }
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training tiles".into()));
    }
    for s in train.iter().chain(val) {
        let (h, w) = s.image.shape();
        if s.elevation.shape() != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "image {h}x{w} paired with elevation {:?}",
                s.elevation.shape()
            )));
        }
        model.net.check_input(3, h, w)?;
    }
    if cfg.epochs > 0 {
        model
            .net
            .set_output_bias((mean_height(train) / model.h_max as f64) as f32);
    }
    let h_max = model.h_max;
    let targets: Vec<Grid<f32>> = train
        .iter()
        .map(|s| s.elevation.heights.map(|h| (h / h_max).clamp(0.0, 1.0)))
        .collect();
    let aug = cfg.augmentation.clone();
    let fetch = |i: usize, seed: u64| {
        let (sym, scale) = draw_augmentation(seed, &aug);
        let (img, elev) = augment_pair(&train[i].image, &targets[i], sym, scale)
            .expect("shapes checked before training");
        (image_tensor(&img), elev.into_vec())
    };
    let snapshot = |net: &UNet| -> Option<f64> {
        if val.is_empty() {
            return None;
        }
        let probe = ElevationModel {
            net: net.clone(),
            h_max,
            frozen: true,
            seed: 0,
        };
        elevation_mae_m(&probe, val).ok()
    };
    let log = fit(&mut model.net, train.len(), &cfg.fit_config(), fetch, snapshot)?;
    Ok(log)
}
