use std::fs;
use std::path::{Path, PathBuf};

use super::{
    accuracy, build_modadd_dataset, init_mlp, init_transformer, load_run, train, Mlp, MlpConfig,
    ModAddConfig, ModAddTransformer, Model, RunInfo, RunWriter, SnapshotRecord, TrainSettings,
    TrainState, TrainTrajectory,
};
use crate::error::{Error, Result};
use crate::metrics::{progress_metrics, MetricConfig, MetricRecord};
use crate::store::{load_mnist, stratified_subset, CheckpointBundle, LabeledDataset, MnistSplit};

impl MlpConfig {
    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            steps: self.steps,
            batch: Some(self.batch),
            optimizer: self.optimizer,
            seed: self.seed,
            snapshots_per_decade: self.snapshots_per_decade,
        }
    }
}

impl ModAddConfig {
    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            steps: self.steps,
            batch: self.batch,
            optimizer: self.optimizer,
            seed: self.seed,
            snapshots_per_decade: self.snapshots_per_decade,
        }
    }
}

/// The MNIST training subset and full test split used by the MLP runs.
pub fn mlp_datasets(cfg: &MlpConfig, mnist_dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_mnist(mnist_dir, MnistSplit::Train)?;
    let test = load_mnist(mnist_dir, MnistSplit::Test)?;
    Ok((stratified_subset(&train, cfg.train_per_class, cfg.seed)?, test))
}

fn clear_stale(dir: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("step_") || name == "resume" {
            fs::remove_dir_all(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    Ok(())
}

/// Trains into `out`, resuming when it already holds a compatible run and
/// returning the stored trajectory when that run is complete.
fn run_into<M: Model>(
    kind: &str,
    config: serde_json::Value,
    settings: &TrainSettings,
    mut model: M,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    out: &Path,
    progress: &mut dyn FnMut(&SnapshotRecord),
) -> Result<TrainTrajectory> {
    let (mut writer, mut state) = match RunWriter::reopen(out, kind, &config, settings, &mut model)? {
        Some((w, s)) => {
            if w.info().complete {
                return Ok(TrainTrajectory {
                    records: w.info().records.clone(),
                });
            }
            (w, s)
        }
        None => {
            clear_stale(out)?;
            (RunWriter::create(out, kind, config, settings)?, TrainState::fresh(&model))
        }
    };
    let traj = train(
        &mut model,
        train_set,
        test_set,
        settings,
        &mut state,
        &mut |m, s, r| {
            let name = writer.snapshot(m, s, r)?;
            progress(r);
            Ok(Some(name))
        },
    )?;
    writer.finish()?;
    Ok(traj)
}

pub fn run_mlp(
    cfg: &MlpConfig,
    mnist_dir: &Path,
    out: &Path,
    progress: &mut dyn FnMut(&SnapshotRecord),
) -> Result<TrainTrajectory> {
    let (train_set, test_set) = mlp_datasets(cfg, mnist_dir)?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    run_into("mlp", config, &cfg.settings(), init_mlp(cfg)?, &train_set, &test_set, out, progress)
}

pub fn run_modadd(cfg: &ModAddConfig, out: &Path, progress: &mut dyn FnMut(&SnapshotRecord)) -> Result<TrainTrajectory> {
    let (train_set, test_set) = build_modadd_dataset(cfg.p, cfg.train_fraction, cfg.data_seed)?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    run_into("modadd", config, &cfg.settings(), init_transformer(cfg)?, &train_set, &test_set, out, progress)
}

/// A trained model family, rebuilt from a run directory's provenance.
#[derive(Clone, Debug)]
pub enum RunModel {
    Mlp(Mlp),
    ModAdd(ModAddTransformer),
}

/// Everything needed to re-evaluate a run's snapshots.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub model: RunModel,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl RunContext {
    /// Reads `run.json` and regenerates the datasets; `mnist_dir` is only
    /// touched for MLP runs.
    pub fn open(dir: &Path, mnist_dir: &Path) -> Result<Self> {
        let info = load_run(dir)?;
        let bad = |e: serde_json::Error| Error::BadManifest {
            path: dir.join(super::RUN_FILE),
            reason: e.to_string(),
        };
        let (model, train, test) = match info.model.as_str() {
            "mlp" => {
                let cfg: MlpConfig = serde_json::from_value(info.config.clone()).map_err(bad)?;
                let (train, test) = mlp_datasets(&cfg, mnist_dir)?;
                (RunModel::Mlp(init_mlp(&cfg)?), train, test)
            }
            "modadd" => {
                let cfg: ModAddConfig = serde_json::from_value(info.config.clone()).map_err(bad)?;
                let (train, test) = build_modadd_dataset(cfg.p, cfg.train_fraction, cfg.data_seed)?;
                (RunModel::ModAdd(init_transformer(&cfg)?), train, test)
            }
            other => {
                return Err(Error::BadManifest {
                    path: dir.join(super::RUN_FILE),
                    reason: format!("unknown model kind `{other}`"),
                })
            }
        };
        Ok(Self {
            dir: dir.to_owned(),
            info,
            model,
            train,
            test,
        })
    }

    /// Snapshot directories ordered by step.
    pub fn snapshots(&self) -> Vec<(u64, PathBuf)> {
        self.info
            .records
            .iter()
            .filter_map(|r| r.dir.as_ref().map(|d| (r.step, self.dir.join(d))))
            .collect()
    }

    /// Loads a snapshot into a fresh copy of the model.
    pub fn load(&self, bundle: &CheckpointBundle) -> Result<RunModel> {
        let mut m = self.model.clone();
        match &mut m {
            RunModel::Mlp(x) => x.load_bundle(bundle)?,
            RunModel::ModAdd(x) => x.load_bundle(bundle)?,
        }
        Ok(m)
    }
}

impl RunModel {
    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        match self {
            RunModel::Mlp(m) => accuracy(m, data),
            RunModel::ModAdd(m) => accuracy(m, data),
        }
    }

    pub fn metrics(&self, step: u64, train: &LabeledDataset, cfg: &MetricConfig) -> Result<MetricRecord> {
        match self {
            RunModel::Mlp(m) => progress_metrics(m, step, train, cfg),
            RunModel::ModAdd(m) => progress_metrics(m, step, train, cfg),
        }
    }

    pub fn to_bundle(&self, step: u64) -> Result<CheckpointBundle> {
        match self {
            RunModel::Mlp(m) => m.to_bundle(step),
            RunModel::ModAdd(m) => m.to_bundle(step),
        }
    }
}
