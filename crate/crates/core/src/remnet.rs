//! Stage 2: input channel assembly and the pathloss estimator under the
//! three input configurations.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elevnet::ElevationModel;
use crate::error::{Error, Result};
use crate::geodata::{
    AntennaPattern, DatasetStore, ElevationMap, Grid, PathlossNormalization, RadioMap, Tile,
    TransmitterSpec,
};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::{fit, Downsample, FitConfig, Loss, LrSchedule, Tensor, UNet, UNetConfig};
use crate::synthcity::{antenna_gain_toward, bearing_deg};

/// Which elevation source Stage 2 sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemMode {
    ImageOnly,
    PredictedNdsm,
    TrueNdsm,
}

impl RemMode {
    pub const ALL: [RemMode; 3] = [RemMode::ImageOnly, RemMode::PredictedNdsm, RemMode::TrueNdsm];

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            RemMode::ImageOnly => "image",
            RemMode::PredictedNdsm => "pred",
            RemMode::TrueNdsm => "true",
        }
    }

    pub fn has_elevation(self) -> bool {
        self != RemMode::ImageOnly
    }

    pub fn layout(self) -> Vec<Channel> {
        let mut l = vec![Channel::Red, Channel::Green, Channel::Blue];
        if self.has_elevation() {
            l.push(Channel::Elevation);
        }
        l.extend([Channel::TxOnehot, Channel::GainProjection, Channel::TxHeight]);
        l
    }
}

impl fmt::Display for RemMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemMode::ImageOnly => "image_only",
            RemMode::PredictedNdsm => "predicted_ndsm",
            RemMode::TrueNdsm => "true_ndsm",
        })
    }
}

impl FromStr for RemMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "image" | "image_only" | "image-only" => Ok(RemMode::ImageOnly),
            "pred" | "predicted" | "predicted_ndsm" => Ok(RemMode::PredictedNdsm),
            "true" | "true_ndsm" | "lidar" => Ok(RemMode::TrueNdsm),
            _ => Err(Error::invalid(format!(
                "unknown mode {s:?}; expected image, pred or true"
            ))),
        }
    }
}

/// One channel of a [`RemInputStack`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Red,
    Green,
    Blue,
    Elevation,
    TxOnehot,
    GainProjection,
    TxHeight,
}

fn layout_string(layout: &[Channel]) -> String {
    let names: Vec<String> = layout
        .iter()
        .map(|c| serde_json::to_value(c).expect("channel serialises").as_str().unwrap().to_string())
        .collect();
    format!("[{}]", names.join(", "))
}

/// Stage-2 network input: `K × H × W` channels in `[0, 1]` plus their order.
#[derive(Clone, Debug, PartialEq)]
pub struct RemInputStack {
    pub tensor: Tensor,
    pub layout: Vec<Channel>,
}

impl RemInputStack {
    pub fn channel(&self, which: Channel) -> Option<&[f32]> {
        self.layout
            .iter()
            .position(|c| *c == which)
            .map(|i| self.tensor.plane(i))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.tensor.h, self.tensor.w)
    }
}

/// Normalisation constants for the non-image channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackParams {
    /// Transmitter height mapped to 1 in the height channel.
    pub h_tx_max: f64,
}

impl Default for StackParams {
    fn default() -> Self {
        Self { h_tx_max: 40.0 }
    }
}

impl StackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_tx_max > 0.0 && self.h_tx_max.is_finite()) {
            return Err(Error::invalid("h_tx_max must be positive"));
        }
        Ok(())
    }
}

/// Gain toward a direction, mapped affinely from `[g_max - a_max, g_max]` dB
/// onto `[0, 1]`. Omnidirectional patterns map to 1.
pub fn normalized_gain(pattern: &AntennaPattern, offset_deg: f64) -> f64 {
    let a_max = pattern.max_attenuation_db();
    if a_max <= 0.0 {
        return 1.0;
    }
    let g = antenna_gain_toward(pattern, offset_deg);
    ((g - (pattern.g_max_db() - a_max)) / a_max).clamp(0.0, 1.0)
}

/// Builds the input stack from an already-chosen elevation map.
///
/// `elevation` must be `Some` exactly when `mode` carries an elevation
/// channel; it is normalised by its own `h_max`.
pub fn assemble_with_elevation(
    tile: &Tile,
    tx: &TransmitterSpec,
    mode: RemMode,
    elevation: Option<&ElevationMap>,
    params: &StackParams,
) -> Result<RemInputStack> {
    params.validate()?;
    tx.validate(tile.extent_m())?;
    let n = tile.size_px();
    let res = tile.resolution_m;
    let plane = n * n;
    let layout = mode.layout();
    let mut data = Vec::with_capacity(layout.len() * plane);
    let rgb = tile.image.as_raw();
    for ch in 0..3 {
        data.extend(rgb.iter().skip(ch).step_by(3).map(|v| *v as f32 / 255.0));
    }
    match (mode.has_elevation(), elevation) {
        (true, Some(e)) => {
            if e.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!(
                    "elevation {:?} for a {n}x{n} tile",
                    e.shape()
                )));
            }
            data.extend(e.heights.data().iter().map(|h| (h / e.h_max).clamp(0.0, 1.0)));
        }
        (false, None) => {}
        (true, None) => {
            return Err(Error::Contract(format!("mode {mode} needs an elevation map")));
        }
        (false, Some(_)) => {
            return Err(Error::Contract(format!("mode {mode} takes no elevation map")));
        }
    }
    let (tr, tc) = tx.pixel(res, n);
    let mut onehot = vec![0.0f32; plane];
    onehot[tr * n + tc] = 1.0;
    data.extend(onehot);
    for r in 0..n {
        let py = (r as f64 + 0.5) * res;
        for c in 0..n {
            let px = (c as f64 + 0.5) * res;
            let offset = bearing_deg(tx, px, py) - tx.azimuth_deg;
            data.push(normalized_gain(&tx.pattern, offset) as f32);
        }
    }
    let height = (tx.height_m / params.h_tx_max).clamp(0.0, 1.0) as f32;
    data.extend(std::iter::repeat(height).take(plane));
    Ok(RemInputStack {
        tensor: Tensor::from_vec(layout.len(), n, n, data),
        layout,
    })
}

/// Builds the input stack for `mode`, running the frozen elevation model
/// inline when the mode asks for a predicted nDSM.
pub fn assemble_inputs(
    tile: &Tile,
    tx: &TransmitterSpec,
    mode: RemMode,
    elev_model: Option<&ElevationModel>,
    params: &StackParams,
) -> Result<RemInputStack> {
    match mode {
        RemMode::ImageOnly => assemble_with_elevation(tile, tx, mode, None, params),
        RemMode::TrueNdsm => assemble_with_elevation(tile, tx, mode, Some(&tile.elevation), params),
        RemMode::PredictedNdsm => {
            let model = elev_model.ok_or_else(|| {
                Error::Contract("predicted-nDSM mode needs an elevation model".into())
            })?;
            if !model.is_frozen() {
                return Err(Error::Contract(
                    "the elevation model must be frozen before Stage 2 uses it".into(),
                ));
            }
            let predicted = model.predict(&tile.image)?;
            assemble_with_elevation(tile, tx, mode, Some(&predicted), params)
        }
    }
}

/// Staged prediction for one transmitter on one tile: Stage 1 (when the
/// model's mode needs it), input assembly, then Stage 2.
///
/// A model trained on predicted elevation only accepts the Stage-1 model it
/// was trained with.
pub fn predict_rem(
    tile: &Tile,
    tx: &TransmitterSpec,
    model: &RemModel,
    elev_model: Option<&ElevationModel>,
) -> Result<RadioMap> {
    if let (RemMode::PredictedNdsm, Some(expected), Some(e)) =
        (model.mode(), model.elevation_sha256(), elev_model)
    {
        let found = e.params_sha256();
        if found != expected {
            return Err(Error::Contract(format!(
                "model was trained with elevation model {expected}, got {found}"
            )));
        }
    }
    let stack = assemble_inputs(tile, tx, model.mode(), elev_model, model.stack_params())?;
    model.predict(&stack)
}

/// Stand-in Stage-2 architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemArch {
    LitRadioUNet,
    LitUNetDCN,
    LitPMNet,
}

impl RemArch {
    pub const ALL: [RemArch; 3] = [RemArch::LitRadioUNet, RemArch::LitUNetDCN, RemArch::LitPMNet];

    pub fn name(self) -> &'static str {
        match self {
            RemArch::LitRadioUNet => "litradiounet",
            RemArch::LitUNetDCN => "litunetdcn",
            RemArch::LitPMNet => "litpmnet",
        }
    }

    /// Display name as used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            RemArch::LitRadioUNet => "LitRadioUNet",
            RemArch::LitUNetDCN => "LitUNetDCN",
            RemArch::LitPMNet => "LitPMNet",
        }
    }

    /// Network layout for `in_channels` inputs, with widths starting at
    /// `base_width` and capped at eight times that.
    pub fn unet_config(self, in_channels: usize, base_width: usize) -> UNetConfig {
        let plain = UNetConfig {
            in_channels,
            base_width,
            max_width: base_width * 8,
            depth: 4,
            convs_per_block: 2,
            downsample: Downsample::MaxPool,
            bottleneck_dilations: vec![1, 1],
            squeeze_excitation: false,
        };
        match self {
            RemArch::LitRadioUNet => plain,
            RemArch::LitUNetDCN => UNetConfig {
                bottleneck_dilations: vec![1, 2, 2],
                ..plain
            },
            RemArch::LitPMNet => UNetConfig {
                downsample: Downsample::StridedConv,
                bottleneck_dilations: vec![1, 2, 3],
                ..plain
            },
        }
    }
}

impl fmt::Display for RemArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for RemArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RemArch::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown architecture {s:?}; expected litradiounet, litunetdcn or litpmnet"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Reduced-precision training; not available on the CPU backend.
    pub mixed_precision: bool,
    pub base_width: usize,
}

impl Default for RemTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            mixed_precision: false,
            base_width: 8,
        }
    }
}

impl RemTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mixed_precision {
            return Err(Error::invalid(
                "mixed precision is not supported by the CPU backend",
            ));
        }
        if self.base_width == 0 {
            return Err(Error::invalid("base width must be positive"));
        }
        self.fit_config().validate()
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            schedule: self.lr_schedule,
            seed: self.seed,
            loss: Loss::L2,
        }
    }
}

/// Per-epoch Stage-2 log line (normalised RMSE).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemEpoch {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
}

/// One Stage-2 example.
#[derive(Clone, Debug)]
pub struct RemSample {
    pub tile_id: String,
    pub index: usize,
    pub tx: TransmitterSpec,
    pub stack: RemInputStack,
    pub target: RadioMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RemHeader {
    kind: String,
    arch_name: String,
    arch: UNetConfig,
    mode: RemMode,
    layout: Vec<Channel>,
    stack: StackParams,
    normalization: PathlossNormalization,
    seed: u64,
    /// Parameter checksum of the Stage-1 model used for predicted nDSM.
    elevation_sha256: Option<String>,
}

const REM_KIND: &str = "rem";

/// Channels the stand-in networks derive from the transmitter one-hot map
/// before their first convolution: log planar distance to the transmitter
/// and the two components of the unit direction toward it.
pub const GEOMETRY_CHANNELS: usize = 3;

/// `stack` followed by the derived geometry channels, all in `[0, 1]`.
pub fn with_geometry(stack: &RemInputStack) -> Result<Tensor> {
    let onehot = stack
        .channel(Channel::TxOnehot)
        .ok_or_else(|| Error::Contract("input stack has no transmitter channel".into()))?;
    let (h, w) = stack.shape();
    let at = onehot
        .iter()
        .position(|v| *v == 1.0)
        .ok_or_else(|| Error::Contract("transmitter channel has no marked cell".into()))?;
    let (tr, tc) = ((at / w) as f32, (at % w) as f32);
    let far = (1.0 + ((h * h + w * w) as f32).sqrt()).ln();
    let mut geo = Tensor::zeros(GEOMETRY_CHANNELS, h, w);
    let plane = h * w;
    for r in 0..h {
        for c in 0..w {
            let (dy, dx) = (r as f32 - tr, c as f32 - tc);
            let d = (dx * dx + dy * dy).sqrt();
            let i = r * w + c;
            geo.data[i] = (1.0 + d).ln() / far;
            let (ux, uy) = if d > 0.0 { (dx / d, dy / d) } else { (0.0, 0.0) };
            geo.data[plane + i] = 0.5 + 0.5 * ux;
            geo.data[2 * plane + i] = 0.5 + 0.5 * uy;
        }
    }
    Ok(stack.tensor.concat(&geo))
}

/// Factor applied to the freshly initialized output-head weights.
const HEAD_SCALE: f32 = 0.1;

/// Learned pathloss estimator bound to one input layout.
#[derive(Clone, Debug)]
pub struct RemModel {
    net: UNet,
    arch: RemArch,
    mode: RemMode,
    layout: Vec<Channel>,
    stack: StackParams,
    normalization: PathlossNormalization,
    seed: u64,
    elevation_sha256: Option<String>,
}

impl RemModel {
    pub fn new(
        arch: RemArch,
        mode: RemMode,
        base_width: usize,
        stack: StackParams,
        normalization: PathlossNormalization,
        seed: u64,
    ) -> Result<Self> {
        stack.validate()?;
        normalization.validate()?;
        let layout = mode.layout();
        let mut net = UNet::new(arch.unet_config(layout.len() + GEOMETRY_CHANNELS, base_width), seed)?;
        // start near the constant map set through the output bias rather
        // than from a random high-variance one; a zero head would also block
        // every gradient into the trunk
        net.scale_head(HEAD_SCALE);
        Ok(Self {
            net,
            arch,
            mode,
            layout,
            stack,
            normalization,
            seed,
            elevation_sha256: None,
        })
    }

    pub fn arch(&self) -> RemArch {
        self.arch
    }

    pub fn mode(&self) -> RemMode {
        self.mode
    }

    pub fn layout(&self) -> &[Channel] {
        &self.layout
    }

    pub fn stack_params(&self) -> &StackParams {
        &self.stack
    }

    pub fn normalization(&self) -> PathlossNormalization {
        self.normalization
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn elevation_sha256(&self) -> Option<&str> {
        self.elevation_sha256.as_deref()
    }

    /// Records which Stage-1 model produced the predicted nDSM inputs.
    pub fn set_elevation_sha256(&mut self, sha: Option<String>) {
        self.elevation_sha256 = sha;
    }

    pub fn params_sha256(&self) -> String {
        self.net.params().sha256()
    }

    pub fn check_stack(&self, stack: &RemInputStack) -> Result<()> {
        if stack.layout != self.layout {
            return Err(Error::LayoutMismatch {
                expected: layout_string(&self.layout),
                found: layout_string(&stack.layout),
            });
        }
        self.net
            .check_input(stack.tensor.c + GEOMETRY_CHANNELS, stack.tensor.h, stack.tensor.w)
    }

    /// Predicted radio map, clamped to `[0, 1]`.
    pub fn predict(&self, stack: &RemInputStack) -> Result<RadioMap> {
        self.check_stack(stack)?;
        let out = self.net.predict(&with_geometry(stack)?);
        let (h, w) = stack.shape();
        let values = Grid::from_vec(h, w, out.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
        RadioMap::new(values, self.normalization)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = RemHeader {
            kind: REM_KIND.into(),
            arch_name: self.arch.name().into(),
            arch: self.net.config().clone(),
            mode: self.mode,
            layout: self.layout.clone(),
            stack: self.stack,
            normalization: self.normalization,
            seed: self.seed,
            elevation_sha256: self.elevation_sha256.clone(),
        };
        write_checkpoint(path, &header, &self.net.params().flatten())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params): (RemHeader, Vec<f32>) = read_checkpoint(path)?;
        let malformed = |reason: String| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason,
        };
        if header.kind != REM_KIND {
            return Err(malformed(format!("expected a rem checkpoint, found kind {:?}", header.kind)));
        }
        let arch: RemArch = header.arch_name.parse()?;
        if header.layout != header.mode.layout() || header.arch.in_channels != header.layout.len() + GEOMETRY_CHANNELS
        {
            return Err(malformed("layout does not match mode".into()));
        }
        let mut net = UNet::new(header.arch, header.seed)?;
        if !net.params_mut().load_flat(&params) {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} parameters do not fit the recorded architecture",
                path.display(),
                params.len()
            )));
        }
        Ok(Self {
            net,
            arch,
            mode: header.mode,
            layout: header.layout,
            stack: header.stack,
            normalization: header.normalization,
            seed: header.seed,
            elevation_sha256: header.elevation_sha256,
        })
    }
}

/// Predictions for every sample, in order.
pub fn predict_samples(model: &RemModel, samples: &[RemSample]) -> Result<Vec<RadioMap>> {
    samples.par_iter().map(|s| model.predict(&s.stack)).collect()
}

/// Global normalised RMSE of `model` over `samples`.
pub fn rmse_over(model: &RemModel, samples: &[RemSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to evaluate".into()));
    }
    let sums: Vec<(f64, usize)> = samples
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.stack)?;
            let sq = p
                .values
                .data()
                .iter()
                .zip(s.target.values.data())
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>();
            Ok((sq, p.values.data().len()))
        })
        .collect::<Result<_>>()?;
    let (sq, n) = sums.iter().fold((0.0, 0), |(a, b), (c, d)| (a + c, b + d));
    Ok((sq / n as f64).sqrt())
}

/// Trains `model` with a mean-squared-error objective on normalised maps.
pub fn train_rem(
    model: &mut RemModel,
    train: &[RemSample],
    val: &[RemSample],
    cfg: &RemTrainConfig,
) -> Result<Vec<RemEpoch>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    for s in train.iter().chain(val) {
        model.check_stack(&s.stack)?;
        if s.target.shape() != s.stack.shape() {
            return Err(Error::DimensionMismatch(format!(
                "sample {}/{}: target {:?} vs input {:?}",
                s.tile_id,
                s.index,
                s.target.shape(),
                s.stack.shape()
            )));
        }
    }
    // data-dependent initialization, so even a zero-epoch run starts from
    // the mean map rather than the clamped floor
    let (sum, n) = train.iter().fold((0.0f64, 0usize), |(a, b), s| {
        let d = s.target.values.data();
        (a + d.iter().map(|v| *v as f64).sum::<f64>(), b + d.len())
    });
    model.net.set_output_bias((sum / n as f64) as f32);
    let fetch = |i: usize, _seed: u64| {
        (
            with_geometry(&train[i].stack).expect("stacks were checked above"),
            train[i].target.values.data().to_vec(),
        )
    };
    let probe_template = model.clone();
    let validate = |net: &UNet| -> Option<f64> {
        if val.is_empty() {
            return None;
        }
        let probe = RemModel {
            net: net.clone(),
            ..probe_template.clone()
        };
        rmse_over(&probe, val).ok()
    };
    let log = fit(&mut model.net, train.len(), &cfg.fit_config(), fetch, validate)?;
    Ok(log
        .into_iter()
        .map(|r| RemEpoch {
            epoch: r.epoch,
            train_rmse: r.train_loss.sqrt(),
            val_rmse: r.val_metric,
        })
        .collect())
}

/// Elevation map the given mode feeds to Stage 2 for `tile`.
pub fn elevation_for(
    tile: &Tile,
    mode: RemMode,
    elev_model: Option<&ElevationModel>,
) -> Result<Option<ElevationMap>> {
    match mode {
        RemMode::ImageOnly => Ok(None),
        RemMode::TrueNdsm => Ok(Some(tile.elevation.clone())),
        RemMode::PredictedNdsm => {
            let model = elev_model.ok_or_else(|| {
                Error::Contract("predicted-nDSM mode needs an elevation model".into())
            })?;
            if !model.is_frozen() {
                return Err(Error::Contract(
                    "the elevation model must be frozen before Stage 2 uses it".into(),
                ));
            }
            Ok(Some(model.predict(&tile.image)?))
        }
    }
}

/// Loads every transmitter sample of `ids` and assembles its inputs.
///
/// Predicted elevation is computed once per tile.
pub fn load_rem_samples(
    store: &DatasetStore,
    ids: &[String],
    mode: RemMode,
    elev_model: Option<&ElevationModel>,
    params: &StackParams,
) -> Result<Vec<RemSample>> {
    let per_tile: Vec<Vec<RemSample>> = ids
        .par_iter()
        .map(|id| {
            let tile = store.load_tile(id)?;
            let elevation = elevation_for(&tile, mode, elev_model)?;
            store
                .sample_indices(id)?
                .into_iter()
                .map(|k| {
                    let tx = store.load_transmitter(id, k)?;
                    let target = store.load_rem(id, k)?;
                    let stack = assemble_with_elevation(&tile, &tx, mode, elevation.as_ref(), params)?;
                    Ok(RemSample {
                        tile_id: id.clone(),
                        index: k,
                        tx,
                        stack,
                        target,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_tile.into_iter().flatten().collect())
}
