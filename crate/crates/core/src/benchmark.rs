//! The standard synthetic benchmark: one frozen Stage-1 model, then every
//! (architecture, configuration) pair trained and scored for several seeds.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::elevnet::{
    constant_mean_mae_m, default_elev_arch, elevation_mae_m, load_elev_samples, train_elevation,
    ElevTrainConfig, ElevationModel,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, improvement_pct, EvalReport, Improvement};
use crate::geodata::{DatasetSplit, DatasetStore};
use crate::remnet::{
    load_rem_samples, predict_samples, train_rem, RemArch, RemEpoch, RemMode, RemModel,
    RemTrainConfig, StackParams,
};
use crate::synthcity::{generate_dataset, SynthConfig};

/// Everything that defines a benchmark run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub elev: ElevTrainConfig,
    pub rem: RemTrainConfig,
    pub archs: Vec<RemArch>,
    pub modes: Vec<RemMode>,
    /// Stage-2 seeds; results are averaged across them.
    pub seeds: Vec<u64>,
    pub stack: StackParams,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                tiles: 250,
                seed: 1,
                tx_per_tile: 2,
                tile_size_px: 64,
                ..Default::default()
            },
            elev: ElevTrainConfig {
                epochs: 10,
                ..Default::default()
            },
            rem: RemTrainConfig {
                epochs: 10,
                batch_size: 8,
                learning_rate: 1e-3,
                ..Default::default()
            },
            archs: RemArch::ALL.to_vec(),
            modes: RemMode::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            stack: StackParams::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.elev.validate()?;
        self.rem.validate()?;
        self.stack.validate()?;
        if self.archs.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid(
                "benchmark needs at least one architecture, mode and seed",
            ));
        }
        Ok(())
    }
}

/// Stage-1 outcome on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub epochs: usize,
    pub test_mae_m: f64,
    pub constant_mae_m: f64,
    /// Relative MAE reduction over the constant-mean predictor, in percent.
    pub gain_over_constant_pct: f64,
    pub params_sha256: String,
    pub seconds: f64,
}

/// Stage-2 training log of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub arch: RemArch,
    pub mode: RemMode,
    pub epochs: Vec<RemEpoch>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: EvalReport,
    pub logs: Vec<TrainingLog>,
}

/// Seed-averaged score of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEntry {
    pub arch: RemArch,
    pub mode: RemMode,
    pub rmse_norm: f64,
    pub rmse_db: f64,
    pub per_seed_rmse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    /// Absent when no configuration needs predicted elevation.
    pub stage1: Option<Stage1Summary>,
    pub runs: Vec<SeedRun>,
    pub mean: Vec<MeanEntry>,
    pub mean_improvements: Vec<Improvement>,
    /// Stage-1 parameter checksum after all Stage-2 training.
    pub stage1_sha256_after: Option<String>,
    pub seconds: f64,
}

impl BenchmarkReport {
    pub fn mean_entry(&self, arch: RemArch, mode: RemMode) -> Option<&MeanEntry> {
        self.mean.iter().find(|e| e.arch == arch && e.mode == mode)
    }

    pub fn mean_improvement(&self, arch: RemArch, mode: RemMode) -> Option<f64> {
        self.mean_improvements
            .iter()
            .find(|i| i.arch == arch && i.mode == mode)
            .map(|i| i.pct)
    }

    /// Seed-averaged table followed by the Stage-1 summary.
    pub fn table(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:<16} {:>10} {:>9} {:>8}  per-seed",
            "architecture", "configuration", "RMSE", "RMSE dB", "vs img"
        );
        for e in &self.mean {
            let imp = self
                .mean_improvement(e.arch, e.mode)
                .map(|p| format!("{p:+.2}%"))
                .unwrap_or_else(|| "-".into());
            let seeds: Vec<String> = e.per_seed_rmse.iter().map(|r| format!("{r:.4}")).collect();
            let _ = writeln!(
                s,
                "{:<14} {:<16} {:>10.4} {:>9.3} {:>8}  {}",
                e.arch.display_name(),
                e.mode.to_string(),
                e.rmse_norm,
                e.rmse_db,
                imp,
                seeds.join(" ")
            );
        }
        if let Some(st) = &self.stage1 {
            let _ = writeln!(
                s,
                "stage 1: test MAE {:.3} m vs constant {:.3} m ({:.1}% better), {} epochs",
                st.test_mae_m, st.constant_mae_m, st.gain_over_constant_pct, st.epochs
            );
        }
        s
    }
}

/// Opens the dataset at `dir`, generating it first if absent.
///
/// An existing dataset must have been produced by exactly `synth`.
pub fn prepare_dataset(dir: &Path, synth: &SynthConfig) -> Result<(DatasetStore, DatasetSplit)> {
    if !dir.join("dataset.json").exists() {
        return generate_dataset(dir, synth);
    }
    let store = DatasetStore::open(dir)?;
    let expected = serde_json::to_value(synth).expect("config serialises");
    if store.info().generator.as_ref() != Some(&expected) {
        return Err(Error::invalid(format!(
            "{} holds a dataset generated with a different configuration",
            dir.display()
        )));
    }
    let split = store.split()?;
    Ok((store, split))
}

/// Trains the Stage-1 model on the training split and freezes it.
pub fn train_stage1(
    store: &DatasetStore,
    split: &DatasetSplit,
    cfg: &ElevTrainConfig,
) -> Result<(ElevationModel, Stage1Summary)> {
    let t = Instant::now();
    let train = load_elev_samples(store, &split.train)?;
    let val = load_elev_samples(store, &split.val)?;
    let test = load_elev_samples(store, &split.test)?;
    let mut model = ElevationModel::new(default_elev_arch(), store.info().h_max, cfg.seed)?;
    let log = train_elevation(&mut model, &train, &val, cfg)?;
    let model = model.frozen();
    let test_mae_m = elevation_mae_m(&model, &test)?;
    let constant_mae_m = constant_mean_mae_m(&train, &test)?;
    let summary = Stage1Summary {
        epochs: log.len(),
        test_mae_m,
        constant_mae_m,
        gain_over_constant_pct: improvement_pct(constant_mae_m, test_mae_m)?,
        params_sha256: model.params_sha256(),
        seconds: t.elapsed().as_secs_f64(),
    };
    Ok((model, summary))
}

/// Runs the full benchmark on the dataset in `data_dir`.
pub fn run_benchmark(data_dir: &Path, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let (store, split) = prepare_dataset(data_dir, &cfg.synth)?;
    let (elev, stage1) = if cfg.modes.contains(&RemMode::PredictedNdsm) {
        let (m, s) = train_stage1(&store, &split, &cfg.elev)?;
        log::info!(
            "stage 1: MAE {:.3} m (constant {:.3} m)",
            s.test_mae_m,
            s.constant_mae_m
        );
        (Some(m), Some(s))
    } else {
        (None, None)
    };

    let norm = store.normalization();
    let mut runs: Vec<SeedRun> = cfg
        .seeds
        .iter()
        .map(|&seed| SeedRun {
            seed,
            report: EvalReport::new(norm, Vec::new()).expect("empty report"),
            logs: Vec::new(),
        })
        .collect();
    let mut entries: Vec<Vec<_>> = vec![Vec::new(); cfg.seeds.len()];
    // samples depend only on the mode, so they are assembled once per mode
    for &mode in &cfg.modes {
        let train = load_rem_samples(&store, &split.train, mode, elev.as_ref(), &cfg.stack)?;
        let val = load_rem_samples(&store, &split.val, mode, elev.as_ref(), &cfg.stack)?;
        let test = load_rem_samples(&store, &split.test, mode, elev.as_ref(), &cfg.stack)?;
        let truths: Vec<_> = test.iter().map(|s| s.target.clone()).collect();
        for &arch in &cfg.archs {
            for (k, &seed) in cfg.seeds.iter().enumerate() {
                let t = Instant::now();
                let mut model = RemModel::new(arch, mode, cfg.rem.base_width, cfg.stack, norm, seed)?;
                if mode == RemMode::PredictedNdsm {
                    model.set_elevation_sha256(elev.as_ref().map(|m| m.params_sha256()));
                }
                let rc = RemTrainConfig {
                    seed,
                    ..cfg.rem.clone()
                };
                let epochs = train_rem(&mut model, &train, &val, &rc)?;
                let preds = predict_samples(&model, &test)?;
                let entry = evaluate(mode, arch, &preds, &truths, &norm)?;
                log::info!("{arch} {mode} seed {seed}: test RMSE {:.4}", entry.rmse_norm);
                entries[k].push(entry);
                runs[k].logs.push(TrainingLog {
                    arch,
                    mode,
                    epochs,
                    seconds: t.elapsed().as_secs_f64(),
                });
            }
        }
    }
    for (run, e) in runs.iter_mut().zip(entries) {
        run.report = EvalReport::new(norm, e)?;
    }

    let mut mean = Vec::new();
    for &arch in &cfg.archs {
        for &mode in &cfg.modes {
            let per_seed_rmse: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.report.entry(arch, mode).map(|e| e.rmse_norm))
                .collect();
            let rmse_norm = per_seed_rmse.iter().sum::<f64>() / per_seed_rmse.len() as f64;
            mean.push(MeanEntry {
                arch,
                mode,
                rmse_norm,
                rmse_db: norm.error_to_db(rmse_norm),
                per_seed_rmse,
            });
        }
    }
    mean.sort_by_key(|e| (e.arch, e.mode));
    let mut mean_improvements = Vec::new();
    for base in mean.iter().filter(|e| e.mode == RemMode::ImageOnly) {
        for e in mean
            .iter()
            .filter(|e| e.arch == base.arch && e.mode != RemMode::ImageOnly)
        {
            mean_improvements.push(Improvement {
                arch: e.arch,
                baseline: RemMode::ImageOnly,
                mode: e.mode,
                pct: improvement_pct(base.rmse_norm, e.rmse_norm)?,
            });
        }
    }
    Ok(BenchmarkReport {
        config: cfg.clone(),
        stage1_sha256_after: elev.as_ref().map(|m| m.params_sha256()),
        stage1,
        runs,
        mean,
        mean_improvements,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchmarkConfig {
        BenchmarkConfig {
            synth: SynthConfig {
                tiles: 6,
                tile_size_px: 16,
                ..Default::default()
            },
            elev: ElevTrainConfig {
                epochs: 1,
                ..Default::default()
            },
            rem: RemTrainConfig {
                epochs: 1,
                batch_size: 4,
                base_width: 2,
                ..Default::default()
            },
            archs: vec![RemArch::LitRadioUNet],
            seeds: vec![0, 1],
            ..Default::default()
        }
    }

    #[test]
    fn tiny_benchmark_reports_every_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let report = run_benchmark(dir.path(), &cfg).unwrap();
        assert_eq!(report.runs.len(), 2);
        assert_eq!(report.mean.len(), 3);
        assert_eq!(report.mean_improvements.len(), 2);
        for e in &report.mean {
            assert_eq!(e.per_seed_rmse.len(), 2);
            assert!(e.rmse_norm.is_finite());
        }
        let st = report.stage1.as_ref().unwrap();
        assert_eq!(Some(&st.params_sha256), report.stage1_sha256_after.as_ref());
        assert!(report.table().contains("predicted_ndsm"));
        // same config, same dataset: identical scores
        let again = run_benchmark(dir.path(), &cfg).unwrap();
        assert_eq!(report.mean, again.mean);
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        prepare_dataset(dir.path(), &cfg.synth).unwrap();
        let other = SynthConfig {
            seed: 9,
            ..cfg.synth.clone()
        };
        assert!(matches!(
            prepare_dataset(dir.path(), &other),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn empty_seed_list_is_invalid() {
        let cfg = BenchmarkConfig {
            seeds: vec![],
            ..tiny()
        };
        assert!(cfg.validate().is_err());
    }
}
