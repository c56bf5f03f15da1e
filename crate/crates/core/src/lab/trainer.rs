use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{accuracy, adamw_step, full_loss, AdamWConfig, AdamWState, Model};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::{save_manifest, LabeledDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub steps: u64,
    /// Minibatch size; `None` means full batch.
    pub batch: Option<usize>,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub snapshots_per_decade: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub step: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    /// Snapshot directory relative to the run directory, if one was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrajectory {
    pub records: Vec<SnapshotRecord>,
}

/// Step 0, then `round(10^(k/per_decade))` for every `k` up to `steps`, then
/// `steps` itself.
pub fn log_schedule(steps: u64, per_decade: u32) -> Vec<u64> {
    let mut out = vec![0];
    if per_decade > 0 {
        let mut k = 0u32;
        loop {
            let s = 10f64.powf(k as f64 / per_decade as f64).round() as u64;
            if s > steps {
                break;
            }
            out.push(s);
            k += 1;
        }
    }
    out.push(steps);
    out.dedup();
    out
}

/// Optimizer progress that a run can be resumed from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub opt: AdamWState,
    pub records: Vec<SnapshotRecord>,
}

impl TrainState {
    pub fn fresh<M: Model>(model: &M) -> Self {
        Self {
            opt: AdamWState::new(model.params().iter().map(|p| p.data.len())),
            records: Vec::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }
}

fn batch_indices(n: usize, settings: &TrainSettings, step: u64) -> Vec<usize> {
    let batch = settings.batch.unwrap_or(n).min(n);
    if batch == n {
        return (0..n).collect();
    }
    let per_epoch = n.div_ceil(batch) as u64;
    let epoch = (step - 1) / per_epoch;
    let k = ((step - 1) % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(rng::derive(settings.seed, epoch)));
    order[k * batch..((k + 1) * batch).min(n)].to_vec()
}

/// Runs AdamW from `state` up to `settings.steps`, evaluating and calling
/// `on_snapshot` at every scheduled step. The hook may return the name of the
/// directory it wrote, which is kept in the record.
pub fn train<M: Model>(
    model: &mut M,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    settings: &TrainSettings,
    state: &mut TrainState,
    on_snapshot: &mut dyn FnMut(&M, &TrainState, &SnapshotRecord) -> Result<Option<String>>,
) -> Result<TrainTrajectory> {
    if train_set.is_empty() {
        return Err(Error::BadParams("empty training set".into()));
    }
    let schedule = log_schedule(settings.steps, settings.snapshots_per_decade);
    let mut snapshot = |model: &M, state: &mut TrainState| -> Result<()> {
        let step = state.step();
        let train_loss = full_loss(model, train_set)?;
        if !train_loss.is_finite() {
            return Err(Error::DivergedLoss { step });
        }
        let mut rec = SnapshotRecord {
            step,
            train_acc: accuracy(model, train_set)?,
            test_acc: accuracy(model, test_set)?,
            train_loss,
            dir: None,
        };
        state.records.push(rec.clone());
        rec.dir = on_snapshot(model, state, &rec)?;
        state.records.last_mut().expect("just pushed").dir = rec.dir;
        Ok(())
    };
    if state.step() == 0 && state.records.is_empty() {
        snapshot(model, state)?;
    }
    let start = state.step();
    let mut next = schedule.iter().copied().filter(|&s| s > start).peekable();
    while state.step() < settings.steps {
        let step = state.step() + 1;
        let idx = batch_indices(train_set.len(), settings, step);
        let (loss, grads) = model.loss_and_grad(train_set, &idx)?;
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { step });
        }
        let mut slices: Vec<&mut [f64]> = model.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
        adamw_step(&mut slices, &grads, &mut state.opt, &settings.optimizer);
        if next.peek() == Some(&step) {
            next.next();
            snapshot(model, state)?;
        }
    }
    Ok(TrainTrajectory {
        records: state.records.clone(),
    })
}

pub const RUN_FILE: &str = "run.json";
const RESUME_DIR: &str = "resume";

/// Contents of `run.json`: provenance plus the snapshot log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: u32,
    pub model: String,
    pub config: serde_json::Value,
    pub settings: TrainSettings,
    pub records: Vec<SnapshotRecord>,
    pub complete: bool,
}

pub fn load_run(dir: &Path) -> Result<RunInfo> {
    let path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::BadManifest {
        path,
        reason: e.to_string(),
    })
}

/// Snapshot directories of a run, ordered by step.
pub fn list_snapshots(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let info = load_run(dir)?;
    Ok(info
        .records
        .iter()
        .filter_map(|r| r.dir.as_ref().map(|d| (r.step, dir.join(d))))
        .collect())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes snapshot directories, `run.json`, and a resume point.
pub struct RunWriter {
    dir: PathBuf,
    info: RunInfo,
}

impl RunWriter {
    pub fn create(dir: &Path, model: &str, config: serde_json::Value, settings: &TrainSettings) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = Self {
            dir: dir.to_owned(),
            info: RunInfo {
                version: 1,
                model: model.to_owned(),
                config,
                settings: settings.clone(),
                records: Vec::new(),
                complete: false,
            },
        };
        w.write_info()?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn info(&self) -> &RunInfo {
        &self.info
    }

    fn write_info(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.info).expect("run info serializes");
        text.push('\n');
        write_atomic(&self.dir.join(RUN_FILE), text.as_bytes())
    }

    /// Saves the model at `rec.step` and a resume point; returns the snapshot
    /// directory name.
    pub fn snapshot<M: Model>(&mut self, model: &M, state: &TrainState, rec: &SnapshotRecord) -> Result<String> {
        let name = format!("step_{:09}", rec.step);
        let mut bundle = model.to_bundle(rec.step)?;
        bundle.train_acc = Some(rec.train_acc);
        bundle.test_acc = Some(rec.test_acc);
        bundle.meta.insert("model".into(), self.info.model.clone());
        bundle.meta.insert("seed".into(), self.info.settings.seed.to_string());
        bundle.meta.insert("lr".into(), self.info.settings.optimizer.lr.to_string());
        bundle.meta.insert("wd".into(), self.info.settings.optimizer.weight_decay.to_string());
        save_manifest(&bundle, &self.dir.join(&name))?;
        self.save_resume(model, state)?;
        self.info.records = state.records.clone();
        if let Some(last) = self.info.records.last_mut() {
            last.dir = Some(name.clone());
        }
        self.write_info()?;
        Ok(name)
    }

    pub fn finish(&mut self) -> Result<()> {
        self.info.complete = true;
        self.write_info()
    }

    fn save_resume<M: Model>(&self, model: &M, state: &TrainState) -> Result<()> {
        let dir = self.dir.join(RESUME_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut bytes = Vec::new();
        for p in model.params() {
            bytes.extend(p.data.iter().flat_map(|v| v.to_le_bytes()));
        }
        for buf in state.opt.m.iter().chain(&state.opt.v) {
            bytes.extend(buf.iter().flat_map(|v| v.to_le_bytes()));
        }
        write_atomic(&dir.join("state.f64le"), &bytes)?;
        write_atomic(&dir.join("step"), state.step().to_string().as_bytes())
    }

    /// Reopens a run whose `run.json` matches `model`/`config`/`settings` and
    /// restores parameters and optimizer state from its resume point. Returns
    /// `None` when the directory holds no compatible run.
    pub fn reopen<M: Model>(
        dir: &Path,
        model_kind: &str,
        config: &serde_json::Value,
        settings: &TrainSettings,
        model: &mut M,
    ) -> Result<Option<(Self, TrainState)>> {
        let Ok(info) = load_run(dir) else {
            return Ok(None);
        };
        if info.model != model_kind || &info.config != config || &info.settings != settings {
            return Ok(None);
        }
        let rdir = dir.join(RESUME_DIR);
        let Ok(step_text) = fs::read_to_string(rdir.join("step")) else {
            return Ok(None);
        };
        let step: u64 = step_text.trim().parse().map_err(|_| Error::BadManifest {
            path: rdir.join("step"),
            reason: "bad step".into(),
        })?;
        let path = rdir.join("state.f64le");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let sizes: Vec<usize> = model.params().iter().map(|p| p.data.len()).collect();
        let total: usize = sizes.iter().sum::<usize>() * 3;
        if bytes.len() != total * 8 {
            return Ok(None);
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for p in model.params_mut() {
            for x in &mut p.data {
                *x = vals.next().expect("length checked");
            }
        }
        let mut opt = AdamWState::new(sizes.iter().copied());
        opt.step = step;
        for buf in opt.m.iter_mut().chain(opt.v.iter_mut()) {
            for x in buf.iter_mut() {
                *x = vals.next().expect("length checked");
            }
        }
        let records: Vec<SnapshotRecord> = info.records.iter().filter(|r| r.step <= step).cloned().collect();
        let mut w = Self {
            dir: dir.to_owned(),
            info,
        };
        w.info.records = records.clone();
        Ok(Some((w, TrainState { opt, records })))
    }
}
