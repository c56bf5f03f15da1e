//! Small from-scratch training lab: an MNIST MLP and a one-layer
//! modular-addition transformer, with hand-written backprop and AdamW.

mod adamw;
mod gradcheck;
pub mod linalg;
mod mlp;
mod modadd;
mod runs;
mod trainer;
mod transformer;

use crate::error::{Error, Result};
use crate::store::{CheckpointBundle, LabeledDataset, LayerTag, WeightMatrix};

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{init_mlp, Mlp, MlpConfig};
pub use modadd::build_modadd_dataset;
pub use runs::{mlp_datasets, run_mlp, run_modadd, RunContext, RunModel};
pub use trainer::{
    list_snapshots, load_run, log_schedule, train, RunInfo, RunWriter, SnapshotRecord,
    TrainSettings, TrainState, TrainTrajectory, RUN_FILE,
};
pub use transformer::{init_transformer, ModAddConfig, ModAddTransformer, CTX};

/// One named parameter tensor in its native row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub tag: LayerTag,
}

impl Param {
    pub fn zeros(id: &str, rows: usize, cols: usize, tag: LayerTag) -> Self {
        Self {
            id: id.to_owned(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
            tag,
        }
    }

    pub fn to_weight_matrix(&self) -> Result<WeightMatrix> {
        WeightMatrix::new(self.id.clone(), self.rows, self.cols, self.data.clone(), self.tag)
    }
}

/// A differentiable classifier over a [`LabeledDataset`].
pub trait Model: Clone + Send + Sync {
    fn params(&self) -> &[Param];
    fn params_mut(&mut self) -> &mut [Param];
    fn n_classes(&self) -> usize;

    /// Class logits for the samples at `idx`, `idx.len() x n_classes`.
    fn logits(&self, data: &LabeledDataset, idx: &[usize]) -> Result<Vec<f64>>;

    /// Mean loss over `idx` and its gradient, one buffer per parameter.
    fn loss_and_grad(&self, data: &LabeledDataset, idx: &[usize]) -> Result<(f64, Vec<Vec<f64>>)>;

    fn loss(&self, data: &LabeledDataset, idx: &[usize]) -> Result<f64>;

    /// Post-ReLU activations of the first hidden layer, `idx.len() x width`.
    fn hidden_activations(&self, data: &LabeledDataset, idx: &[usize]) -> Result<(Vec<f64>, usize)>;

    fn param(&self, id: &str) -> Option<&Param> {
        self.params().iter().find(|p| p.id == id)
    }

    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// All parameters as a checkpoint bundle (biases included, tagged as such).
    fn to_bundle(&self, step: u64) -> Result<CheckpointBundle> {
        let layers = self
            .params()
            .iter()
            .map(Param::to_weight_matrix)
            .collect::<Result<Vec<_>>>()?;
        CheckpointBundle::new(step, layers)
    }

    /// Overwrites parameters from a bundle with the same layer inventory.
    fn load_bundle(&mut self, bundle: &CheckpointBundle) -> Result<()> {
        for p in self.params_mut() {
            let layer = bundle.layer(&p.id).ok_or_else(|| {
                Error::ArchitectureMismatch(format!("checkpoint has no layer `{}`", p.id))
            })?;
            if layer.native_shape() != (p.rows, p.cols) {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer `{}` is {:?}, model expects {}x{}",
                    p.id,
                    layer.native_shape(),
                    p.rows,
                    p.cols
                )));
            }
            p.data = layer.native_entries();
        }
        Ok(())
    }
}

const EVAL_CHUNK: usize = 2048;

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `data` classified correctly.
pub fn accuracy<M: Model>(model: &M, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let c = model.n_classes();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in all.chunks(EVAL_CHUNK) {
        let logits = model.logits(data, chunk)?;
        for (row, &i) in logits.chunks_exact(c).zip(chunk) {
            correct += usize::from(argmax(row) == data.labels[i]);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Logits for every sample, in chunks.
pub fn all_logits<M: Model>(model: &M, data: &LabeledDataset) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len() * model.n_classes());
    for chunk in all.chunks(EVAL_CHUNK) {
        out.extend(model.logits(data, chunk)?);
    }
    Ok(out)
}

/// Mean loss over the whole dataset.
pub fn full_loss<M: Model>(model: &M, data: &LabeledDataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        total += model.loss(data, chunk)? * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}
