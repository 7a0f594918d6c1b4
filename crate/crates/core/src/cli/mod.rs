//! `remcli`: dataset generation, training, evaluation, footprint reports,
//! benchmark runs and the HTTP service behind one entry point.
//!
//! Every command accepts `--seed`, `--out` and `--config` and writes a
//! [`RunManifest`]. Settings resolve as flag > config file > built-in
//! default.

pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::benchmark::{prepare_dataset, run_benchmark, BenchmarkConfig};
use crate::elevnet::{
    constant_mean_mae_m, default_elev_arch, elevation_mae_m, load_elev_samples, train_elevation,
    ElevTrainConfig, ElevationModel,
};
use crate::error::{Error, Result};
use crate::evalkit::{distribution_svg, evaluate, EvalReport, DEFAULT_BINS};
use crate::footprint::{footprint_report, footprint_table, FootprintScenario};
use crate::geodata::io::{read_json, write_json};
use crate::geodata::{DatasetSplit, DatasetStore};
use crate::remnet::{
    load_rem_samples, predict_samples, train_rem, RemArch, RemMode, RemModel, RemTrainConfig,
    StackParams,
};
use crate::serve::ServeState;
use crate::synthcity::{generate_dataset, SynthConfig};
pub use manifest::{manifest_path, with_manifest, Artifact, RunManifest, RunStatus};

#[derive(Debug, Parser)]
#[command(name = "remcli", version, about = "Two-stage radio environment map toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (scenes, images, elevation, oracle maps)
    #[command(alias = "synth-gen")]
    Synth(SynthArgs),
    /// Train the Stage-1 image-to-elevation model
    TrainElev(TrainElevArgs),
    /// Train a Stage-2 pathloss model for one configuration
    TrainRem(TrainRemArgs),
    /// Score trained pathloss models on a dataset split
    Eval(EvalArgs),
    /// Energy, carbon and storage footprint report
    Footprint(FootprintArgs),
    /// Train and score every (architecture, configuration) pair over several seeds
    Benchmark(BenchmarkArgs),
    /// Serve tiles and predictions over HTTP
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Random seed (overrides the config file)
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output dataset directory (must be absent or empty)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tiles: Option<usize>,
    /// Mean buildings per hectare
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub tx_per_tile: Option<usize>,
    /// Tile edge in pixels
    #[arg(long)]
    pub tile_size: Option<usize>,
    /// Per-building roof brightness noise amplitude
    #[arg(long)]
    pub roof_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainElevArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint file
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

/// Config file schema of `train-rem`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRemConfig {
    pub mode: RemMode,
    pub arch: RemArch,
    pub stack: StackParams,
    pub train: RemTrainConfig,
}

impl Default for TrainRemConfig {
    fn default() -> Self {
        Self {
            mode: RemMode::ImageOnly,
            arch: RemArch::LitRadioUNet,
            stack: StackParams::default(),
            train: RemTrainConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainRemArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint file
    #[arg(long)]
    pub out: PathBuf,
    /// image | pred | true
    #[arg(long)]
    pub mode: Option<RemMode>,
    /// litradiounet | litunetdcn | litpmnet
    #[arg(long)]
    pub arch: Option<RemArch>,
    /// Frozen Stage-1 checkpoint (required for pred)
    #[arg(long)]
    pub elev: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub base_width: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Config file schema of `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split: SplitName,
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: SplitName::Test,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Stage-2 checkpoints to score
    #[arg(long = "model", required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    /// Stage-1 checkpoint for predicted-elevation models
    #[arg(long)]
    pub elev: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
    /// Output directory (report.json, table.txt, distributions.svg)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FootprintArgs {
    #[command(flatten)]
    pub common: Common,
    /// Complete scenario JSON (same as --config)
    #[arg(long, conflicts_with = "config")]
    pub scenario: Option<PathBuf>,
    /// Output report file
    #[arg(long)]
    pub out: PathBuf,
    /// Also print the table to stdout
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: Common,
    /// Existing dataset generated with the configured synth settings
    #[arg(long, required_unless_present = "autogen")]
    pub data: Option<PathBuf>,
    /// Generate the dataset under `<out>/dataset`
    #[arg(long, conflicts_with = "data")]
    pub autogen: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Stage-2 epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stage-1 epochs
    #[arg(long)]
    pub elev_epochs: Option<usize>,
    /// Stage-2 learning rate
    #[arg(long)]
    pub lr: Option<f32>,
    /// Number of Stage-2 seeds, counted up from --seed
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub archs: Option<Vec<RemArch>>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<RemMode>>,
}

/// Config file schema of `serve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub cors_origin: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            cors_origin: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of *.ckpt files
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Allowed CORS origin (default: any)
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Directory for the run manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_from<I, S>(argv: I) -> Result<RunManifest>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::invalid(e.to_string()))?;
    run(cli, argv)
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<RunManifest> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a, argv),
        Command::TrainElev(a) => cmd_train_elev(a, argv),
        Command::TrainRem(a) => cmd_train_rem(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::Footprint(a) => cmd_footprint(a, argv),
        Command::Benchmark(a) => cmd_benchmark(a, argv),
        Command::Serve(a) => cmd_serve(a, argv),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialise")
}

/// Output directories must be new or empty so a run never mixes with
/// another run's artifacts.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::invalid(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parent_dir(file: &Path) -> Result<()> {
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn split_ids(split: &DatasetSplit, which: SplitName) -> &[String] {
    match which {
        SplitName::Train => &split.train,
        SplitName::Val => &split.val,
        SplitName::Test => &split.test,
    }
}

pub fn cmd_synth(a: SynthArgs, argv: Vec<String>) -> Result<RunManifest> {
    let mut cfg: SynthConfig = load_config(a.common.config.as_deref())?;
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.tiles {
        cfg.tiles = v;
    }
    if let Some(v) = a.density {
        cfg.scene.density_per_ha = v;
    }
    if let Some(v) = a.tx_per_tile {
        cfg.tx_per_tile = v;
    }
    if let Some(v) = a.tile_size {
        cfg.tile_size_px = v;
    }
    if let Some(v) = a.roof_noise {
        cfg.render.roof_noise = v;
    }
    let mut m = RunManifest::new("synth", argv);
    m.config = to_value(&cfg);
    m.seeds = vec![cfg.seed];
    with_manifest(m, &manifest_path(&a.out, true), |m| {
        if let Some(c) = &a.common.config {
            m.input(c)?;
        }
        cfg.validate()?;
        fresh_dir(&a.out)?;
        let (store, split) = generate_dataset(&a.out, &cfg)?;
        m.summary = json!({
            "tiles": store.tile_ids()?.len(),
            "split": [split.train.len(), split.val.len(), split.test.len()],
        });
        m.output(&a.out)
    })
}

pub fn cmd_train_elev(a: TrainElevArgs, argv: Vec<String>) -> Result<RunManifest> {
    let mut cfg: ElevTrainConfig = load_config(a.common.config.as_deref())?;
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    let mut m = RunManifest::new("train-elev", argv);
    m.config = to_value(&cfg);
    m.seeds = vec![cfg.seed];
    with_manifest(m, &manifest_path(&a.out, false), |m| {
        if let Some(c) = &a.common.config {
            m.input(c)?;
        }
        m.input(&a.data)?;
        let store = DatasetStore::open(&a.data)?;
        let split = store.split()?;
        let train = load_elev_samples(&store, &split.train)?;
        let val = load_elev_samples(&store, &split.val)?;
        let test = load_elev_samples(&store, &split.test)?;
        let mut model = ElevationModel::new(default_elev_arch(), store.info().h_max, cfg.seed)?;
        let log = train_elevation(&mut model, &train, &val, &cfg)?;
        let model = model.frozen();
        parent_dir(&a.out)?;
        model.save(&a.out)?;
        m.output(&a.out)?;
        m.summary = json!({
            "epochs": log,
            "test_mae_m": elevation_mae_m(&model, &test)?,
            "constant_mae_m": constant_mean_mae_m(&train, &test)?,
            "params_sha256": model.params_sha256(),
        });
        Ok(())
    })
}

pub fn cmd_train_rem(a: TrainRemArgs, argv: Vec<String>) -> Result<RunManifest> {
    let mut cfg: TrainRemConfig = load_config(a.common.config.as_deref())?;
    if let Some(v) = a.common.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.arch {
        cfg.arch = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.base_width {
        cfg.train.base_width = v;
    }
    let mut m = RunManifest::new("train-rem", argv);
    m.config = to_value(&cfg);
    m.seeds = vec![cfg.train.seed];
    with_manifest(m, &manifest_path(&a.out, false), |m| {
        if let Some(c) = &a.common.config {
            m.input(c)?;
        }
        m.input(&a.data)?;
        let elev = match &a.elev {
            Some(p) => {
                m.input(p)?;
                Some(ElevationModel::load(p)?.frozen())
            }
            None => None,
        };
        if cfg.mode == RemMode::PredictedNdsm && elev.is_none() {
            return Err(Error::invalid("--mode pred needs --elev <stage-1 checkpoint>"));
        }
        let store = DatasetStore::open(&a.data)?;
        let split = store.split()?;
        let train = load_rem_samples(&store, &split.train, cfg.mode, elev.as_ref(), &cfg.stack)?;
        let val = load_rem_samples(&store, &split.val, cfg.mode, elev.as_ref(), &cfg.stack)?;
        let mut model = RemModel::new(
            cfg.arch,
            cfg.mode,
            cfg.train.base_width,
            cfg.stack,
            store.normalization(),
            cfg.train.seed,
        )?;
        if cfg.mode == RemMode::PredictedNdsm {
            model.set_elevation_sha256(elev.as_ref().map(|e| e.params_sha256()));
        }
        let log = train_rem(&mut model, &train, &val, &cfg.train)?;
        parent_dir(&a.out)?;
        model.save(&a.out)?;
        m.output(&a.out)?;
        m.summary = json!({ "epochs": log, "params_sha256": model.params_sha256() });
        Ok(())
    })
}

pub fn cmd_eval(a: EvalArgs, argv: Vec<String>) -> Result<RunManifest> {
    let mut cfg: EvalConfig = load_config(a.common.config.as_deref())?;
    if let Some(v) = a.split {
        cfg.split = v;
    }
    let mut m = RunManifest::new("eval", argv);
    m.config = to_value(&cfg);
    m.seeds = a.common.seed.into_iter().collect();
    with_manifest(m, &manifest_path(&a.out, true), |m| {
        if let Some(c) = &a.common.config {
            m.input(c)?;
        }
        m.input(&a.data)?;
        let elev = match &a.elev {
            Some(p) => {
                m.input(p)?;
                Some(ElevationModel::load(p)?.frozen())
            }
            None => None,
        };
        let store = DatasetStore::open(&a.data)?;
        let split = store.split()?;
        let ids = split_ids(&split, cfg.split);
        let norm = store.normalization();
        let mut entries = Vec::new();
        for path in &a.models {
            m.input(path)?;
            let model = RemModel::load(path)?;
            if let (Some(expected), Some(e)) = (model.elevation_sha256(), elev.as_ref()) {
                if model.mode() == RemMode::PredictedNdsm && e.params_sha256() != expected {
                    return Err(Error::Contract(format!(
                        "{} was trained with a different elevation model",
                        path.display()
                    )));
                }
            }
            let samples =
                load_rem_samples(&store, ids, model.mode(), elev.as_ref(), model.stack_params())?;
            let preds = predict_samples(&model, &samples)?;
            let truths: Vec<_> = samples.into_iter().map(|s| s.target).collect();
            entries.push(evaluate(model.mode(), model.arch(), &preds, &truths, &norm)?);
        }
        let report = EvalReport::new(norm, entries)?;
        fresh_dir(&a.out)?;
        write_report(&a.out, &report, m)?;
        m.summary = json!({
            "rows": report.entries.iter().map(|e| json!({
                "arch": e.arch, "mode": e.mode, "rmse": e.rmse_norm, "mae": e.mae_norm,
            })).collect::<Vec<_>>(),
        });
        Ok(())
    })
}

fn write_report(out: &Path, report: &EvalReport, m: &mut RunManifest) -> Result<()> {
    let json_path = out.join("report.json");
    write_json(&json_path, report)?;
    m.output(&json_path)?;
    let table_path = out.join("table.txt");
    fs::write(&table_path, report.table()).map_err(|e| Error::io(&table_path, e))?;
    m.output(&table_path)?;
    let series: Vec<_> = report
        .distributions
        .iter()
        .map(|(arch, mode, h)| (format!("{} {}", arch.display_name(), mode), h.clone()))
        .collect();
    if !series.is_empty() {
        let svg_path = out.join("distributions.svg");
        let svg = distribution_svg("Per-sample RMSE", &series);
        fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
        m.output(&svg_path)?;
    }
    Ok(())
}

pub fn cmd_footprint(a: FootprintArgs, argv: Vec<String>) -> Result<RunManifest> {
    let scenario_path = a.scenario.as_ref().or(a.common.config.as_ref());
    let scenario = match scenario_path {
        Some(p) => {
            let raw: serde_json::Value = read_json(p)?;
            FootprintScenario::from_json(&raw)?
        }
        None => FootprintScenario::default(),
    };
    let mut m = RunManifest::new("footprint", argv);
    m.config = to_value(&scenario);
    m.seeds = a.common.seed.into_iter().collect();
    with_manifest(m, &manifest_path(&a.out, false), |m| {
        if let Some(p) = scenario_path {
            m.input(p)?;
        }
        let report = footprint_report(&scenario)?;
        parent_dir(&a.out)?;
        write_json(&a.out, &report)?;
        m.output(&a.out)?;
        let table = footprint_table(&report);
        if a.table {
            print!("{table}");
        }
        m.summary = json!({ "rows": report.rows.len() });
        Ok(())
    })
}

pub fn cmd_benchmark(a: BenchmarkArgs, argv: Vec<String>) -> Result<RunManifest> {
    let mut cfg: BenchmarkConfig = load_config(a.common.config.as_deref())?;
    if let Some(n) = a.runs {
        let base = cfg.seeds.first().copied().unwrap_or(0);
        cfg.seeds = (0..n as u64).map(|k| base + k).collect();
    }
    if let Some(s) = a.common.seed {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (0..n).map(|k| s + k).collect();
    }
    if let Some(v) = a.epochs {
        cfg.rem.epochs = v;
    }
    if let Some(v) = a.elev_epochs {
        cfg.elev.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.rem.learning_rate = v;
    }
    if let Some(v) = a.archs {
        cfg.archs = v;
    }
    if let Some(v) = a.modes {
        cfg.modes = v;
    }
    let mut m = RunManifest::new("benchmark", argv);
    m.config = to_value(&cfg);
    m.seeds = cfg.seeds.clone();
    with_manifest(m, &manifest_path(&a.out, true), |m| {
        if let Some(c) = &a.common.config {
            m.input(c)?;
        }
        fresh_dir(&a.out)?;
        let data = match &a.data {
            Some(d) => {
                if !d.join("dataset.json").exists() {
                    return Err(Error::MissingFile(d.join("dataset.json")));
                }
                d.clone()
            }
            None => {
                let d = a.out.join("dataset");
                prepare_dataset(&d, &cfg.synth)?;
                m.output(&d)?;
                d
            }
        };
        if a.data.is_some() {
            m.input(&data)?;
        }
        let report = run_benchmark(&data, &cfg)?;
        let json_path = a.out.join("report.json");
        write_json(&json_path, &report)?;
        m.output(&json_path)?;
        let table_path = a.out.join("table.txt");
        fs::write(&table_path, report.table()).map_err(|e| Error::io(&table_path, e))?;
        m.output(&table_path)?;
        if let Some(first) = report.runs.first() {
            let series: Vec<_> = first
                .report
                .distributions
                .iter()
                .map(|(arch, mode, h)| (format!("{} {}", arch.display_name(), mode), h.clone()))
                .collect();
            if !series.is_empty() {
                let svg_path = a.out.join("distributions.svg");
                let title = format!("Per-sample RMSE, seed {}", first.seed);
                fs::write(&svg_path, distribution_svg(&title, &series))
                    .map_err(|e| Error::io(&svg_path, e))?;
                m.output(&svg_path)?;
            }
        }
        m.summary = json!({
            "mean": report.mean,
            "improvements": report.mean_improvements,
            "stage1": report.stage1,
        });
        print!("{}", report.table());
        Ok(())
    })
}

pub fn cmd_serve(a: ServeArgs, argv: Vec<String>) -> Result<RunManifest> {
    let mut cfg: ServeConfig = load_config(a.common.config.as_deref())?;
    if let Some(v) = a.host {
        cfg.host = v;
    }
    if let Some(v) = a.port {
        cfg.port = v;
    }
    if a.cors_origin.is_some() {
        cfg.cors_origin = a.cors_origin;
    }
    let mut m = RunManifest::new("serve", argv);
    m.config = to_value(&cfg);
    m.seeds = a.common.seed.into_iter().collect();
    let manifest_file = a.out.as_ref().map(|o| manifest_path(o, true));
    let body = |m: &mut RunManifest| -> Result<()> {
        if let Some(c) = &a.common.config {
            m.input(c)?;
        }
        m.input(&a.data)?;
        if let Some(models) = &a.models {
            m.input(models)?;
        }
        let state = Arc::new(ServeState::load(&a.data, a.models.as_deref())?);
        m.summary = json!({ "models": state.models() });
        let addr = format!("{}:{}", cfg.host, cfg.port);
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| Error::io(PathBuf::from(&addr), e))?;
        rt.block_on(crate::serve::serve(state, &addr, cfg.cors_origin.as_deref()))
    };
    match manifest_file {
        Some(path) => with_manifest(m, &path, body),
        None => {
            let mut m = m;
            body(&mut m)?;
            m.status = RunStatus::Succeeded;
            Ok(m)
        }
    }
}
