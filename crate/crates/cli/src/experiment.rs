//! In-memory experiment stages shared by the commands and the acceptance
//! suite: data preparation, model fitting and the evaluation sweep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dmimo_beam::cgan::{CganImputer, GanConfig, TrainingCurves};
use dmimo_beam::dataio::{self, MaskedDataset};
use dmimo_beam::forest::RfImputer;
use dmimo_beam::impute::MeanImputer;
use dmimo_beam::missforest::{MfImputer, MfParams};
use dmimo_beam::pipeline::{run_sweep, ModelKind, ModelSet, SweepResult, SweepSpec};
use dmimo_beam::scenario::{generate_scenario, Dataset};
use dmimo_beam::seed::derive_seed;
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Generated dataset, its split and the masked training replicas.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub dataset: Dataset<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub train: MaskedDataset<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn dataset_stem(dir: &Path) -> PathBuf {
    dir.join("dataset")
}

fn train_stem(dir: &Path) -> PathBuf {
    dir.join("train")
}

fn split_path(dir: &Path) -> PathBuf {
    dir.join("split.json")
}

impl ExperimentData {
    pub fn build(config: &ExperimentConfig) -> Result<Self, CliError> {
        let seeds = config.seeds;
        let scenario = dmimo_beam::scenario::ScenarioConfig {
            seed: derive_seed(seeds.data, 0),
            ..config.scenario.clone()
        };
        let dataset = generate_scenario::<f64>(&scenario)?;
        let (train_idx, test_idx) = dataio::split_rows(&dataset, config.masking.split_fraction, derive_seed(seeds.data, 1))?;
        let m = &config.masking;
        let train = dataio::oversample(&dataset.subset(&train_idx), m.oversample_factor, m.train_p, derive_seed(seeds.data, 2))?;
        Ok(ExperimentData {
            dataset,
            train_idx,
            test_idx,
            train,
        })
    }

    pub fn test(&self) -> Dataset<f64> {
        self.dataset.subset(&self.test_idx)
    }

    /// `dataset.{json,csv}`, `split.json` and `train_{masked,truth,manifest}`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let stem = dataset_stem(dir);
        dataio::save_dataset(&self.dataset, &stem)?;
        let split = SplitFile {
            train: self.train_idx.clone(),
            test: self.test_idx.clone(),
        };
        dataio::write_json(&split_path(dir), &split)?;
        let tstem = train_stem(dir);
        dataio::save_masked(&self.train, &tstem)?;
        Ok(vec![
            dataio::json_path(&stem),
            dataio::csv_path(&stem),
            split_path(dir),
            dataio::masked_csv_path(&tstem),
            dataio::truth_csv_path(&tstem),
            dataio::manifest_path(&tstem),
        ])
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let stem = dataset_stem(dir);
        if !dataio::json_path(&stem).exists() {
            return Err(CliError::State(format!(
                "no dataset at {}; run `generate` first",
                dataio::json_path(&stem).display()
            )));
        }
        let dataset = dataio::load_dataset(&stem)?;
        let split: SplitFile = dataio::read_json(&split_path(dir))?;
        let train = dataio::load_masked(&train_stem(dir))?;
        Ok(ExperimentData {
            dataset,
            train_idx: split.train,
            test_idx: split.test,
            train,
        })
    }
}

pub fn rf_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.seeds.model, 1)
}

pub fn mf_params(config: &ExperimentConfig) -> MfParams {
    MfParams {
        forest: config.models.mf.forest(),
        max_iter: config.models.mf.max_iter,
        seed: derive_seed(config.seeds.model, 2),
    }
}

pub fn gan_config(config: &ExperimentConfig) -> GanConfig {
    GanConfig {
        seed: derive_seed(config.seeds.model, 3),
        ..config.models.cgan.clone()
    }
}

/// Output band for c-GAN imputations, 20 dB beyond the physical range.
pub fn gan_band(config: &ExperimentConfig) -> (f64, f64) {
    (config.scenario.noise_floor_dbm - 20.0, config.scenario.tx_power_dbm + 20.0)
}

pub fn fit_rf(config: &ExperimentConfig, data: &ExperimentData) -> Result<RfImputer<f64>, CliError> {
    let t = Instant::now();
    let rf = RfImputer::fit(&data.train.rows, &config.models.rf, rf_seed(config))?;
    info!("rf: {} forests fitted in {:.1?}", rf.forests.len(), t.elapsed());
    Ok(rf)
}

pub fn fit_mf(config: &ExperimentConfig, data: &ExperimentData) -> Result<MfImputer<f64>, CliError> {
    Ok(MfImputer::new(data.train.rows.clone(), mf_params(config))?)
}

pub fn fit_cgan(config: &ExperimentConfig, data: &ExperimentData) -> Result<(CganImputer<f64>, TrainingCurves<f64>), CliError> {
    let t = Instant::now();
    let (cgan, _, curves) = CganImputer::train(&data.train.rows, &gan_config(config), Some(gan_band(config)))?;
    info!("cgan: trained in {:.1?}", t.elapsed());
    Ok((cgan, curves))
}

/// Fits every requested model in memory.
pub fn fit_models(config: &ExperimentConfig, data: &ExperimentData, models: &[ModelKind]) -> Result<ModelSet<f64>, CliError> {
    let mut set = ModelSet::default();
    for m in models {
        match m {
            ModelKind::Rf => set.rf = Some(fit_rf(config, data)?),
            ModelKind::Mf => set.mf = Some(fit_mf(config, data)?),
            ModelKind::Cgan => set.cgan = Some(fit_cgan(config, data)?.0),
            ModelKind::Mean => set.mean = Some(MeanImputer::fit(&data.train.rows)?),
            ModelKind::Random => {}
        }
    }
    Ok(set)
}

pub fn sweep_spec(config: &ExperimentConfig, models: &[ModelKind]) -> SweepSpec {
    SweepSpec {
        models: models.to_vec(),
        ps: config.masking.test_ps.clone(),
        ks: config.ks.clone(),
        seed: config.seeds.eval,
    }
}

pub fn sweep(config: &ExperimentConfig, data: &ExperimentData, models: &ModelSet<f64>, kinds: &[ModelKind]) -> Result<SweepResult<f64>, CliError> {
    let t = Instant::now();
    let result = run_sweep(&data.test(), models, &sweep_spec(config, kinds))?;
    info!("sweep: {} outcomes in {:.1?}", result.outcomes.len(), t.elapsed());
    Ok(result)
}

// ---------------------------------------------------------------------------
// Checkpoints

/// MissForest is transductive, so its checkpoint only records settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfManifest {
    pub params: MfParams,
    pub max_iter: usize,
    pub train_rows: usize,
}

pub fn rf_path(dir: &Path) -> PathBuf {
    dir.join("rf.bin")
}

pub fn rf_manifest_path(dir: &Path) -> PathBuf {
    dir.join("rf_manifest.json")
}

pub fn mf_path(dir: &Path) -> PathBuf {
    dir.join("mf.json")
}

pub fn cgan_dir(dir: &Path) -> PathBuf {
    dir.join("cgan")
}

pub fn cgan_curves_path(dir: &Path) -> PathBuf {
    dir.join("cgan_curves.csv")
}

/// Trains one model and writes its checkpoint files under `dir`.
pub fn train_and_save(config: &ExperimentConfig, data: &ExperimentData, model: ModelKind, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| dmimo_beam::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    match model {
        ModelKind::Rf => {
            let rf = fit_rf(config, data)?;
            rf.save(&rf_path(dir))?;
            dataio::write_json(&rf_manifest_path(dir), &rf.manifest())?;
            Ok(vec![rf_path(dir), rf_manifest_path(dir)])
        }
        ModelKind::Mf => {
            let params = mf_params(config);
            let manifest = MfManifest {
                params,
                max_iter: params.max_iter,
                train_rows: data.train.rows.len(),
            };
            dataio::write_json(&mf_path(dir), &manifest)?;
            Ok(vec![mf_path(dir)])
        }
        ModelKind::Cgan => {
            let (cgan, curves) = fit_cgan(config, data)?;
            cgan.save(&cgan_dir(dir))?;
            curves.write_csv(&cgan_curves_path(dir))?;
            Ok(vec![cgan_dir(dir), cgan_curves_path(dir)])
        }
        ModelKind::Mean | ModelKind::Random => Ok(Vec::new()),
    }
}

fn missing(model: ModelKind, path: &Path) -> CliError {
    CliError::State(format!(
        "no trained {model} checkpoint at {}; run `train --model {model}` first",
        path.display()
    ))
}

/// Loads checkpoints for `models`; mean and random need none.
pub fn load_models(config: &ExperimentConfig, data: &ExperimentData, models: &[ModelKind], dir: &Path) -> Result<ModelSet<f64>, CliError> {
    let mut set = ModelSet::default();
    for &m in models {
        match m {
            ModelKind::Rf => {
                let path = rf_path(dir);
                if !path.exists() {
                    return Err(missing(m, &path));
                }
                set.rf = Some(RfImputer::load(&path)?);
            }
            ModelKind::Mf => {
                let path = mf_path(dir);
                if !path.exists() {
                    return Err(missing(m, &path));
                }
                let manifest: MfManifest = dataio::read_json(&path)?;
                if manifest.params != mf_params(config) {
                    info!("mf: using settings from {}", path.display());
                }
                set.mf = Some(MfImputer::new(data.train.rows.clone(), manifest.params)?);
            }
            ModelKind::Cgan => {
                let path = cgan_dir(dir);
                if !path.join("cgan.json").exists() {
                    return Err(missing(m, &path));
                }
                set.cgan = Some(CganImputer::load(&path)?);
            }
            ModelKind::Mean => set.mean = Some(MeanImputer::fit(&data.train.rows)?),
            ModelKind::Random => {}
        }
    }
    Ok(set)
}
