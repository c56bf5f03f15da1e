use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{add_row_bias, column_sums, gemm, matmul, relu_backward, relu_in_place};
use super::{AdamWConfig, Model, Param};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::{LabeledDataset, LayerTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
    /// Every parameter is multiplied by this after the default initialization.
    pub init_scale: f64,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    pub steps: u64,
    pub seed: u64,
    /// Training subset size per class, drawn with `stratified_subset`.
    pub train_per_class: usize,
    pub snapshots_per_decade: u32,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![784, 200, 200, 10],
            init_scale: 8.0,
            batch: 200,
            optimizer: AdamWConfig {
                lr: 5e-4,
                weight_decay: 0.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                warmup_steps: 0,
            },
            steps: 200_000,
            seed: 0,
            train_per_class: 100,
            snapshots_per_decade: 10,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.widths.contains(&0) {
            return Err(Error::BadParams(format!(
                "MLP needs 4 positive widths, got {:?}",
                self.widths
            )));
        }
        if !(self.init_scale > 0.0) || self.batch == 0 {
            return Err(Error::BadParams("init_scale and batch must be positive".into()));
        }
        Ok(())
    }
}

/// ReLU MLP with layers `fc1..fc3`, weights stored `out x in`, MSE loss
/// against one-hot targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    params: Vec<Param>,
}

/// PyTorch-default `Linear` init (weights and biases uniform in
/// `±1/√fan_in`), then every value times `init_scale`.
pub fn init_mlp(cfg: &MlpConfig) -> Result<Mlp> {
    cfg.validate()?;
    let mut r = rng::rng(cfg.seed);
    let mut params = Vec::new();
    for l in 0..3 {
        let (fan_in, fan_out) = (cfg.widths[l], cfg.widths[l + 1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let name = format!("fc{}", l + 1);
        let mut w = Param::zeros(&name, fan_out, fan_in, LayerTag::Dense);
        for v in &mut w.data {
            *v = r.random_range(-bound..bound) * cfg.init_scale;
        }
        let mut b = Param::zeros(&format!("{name}.bias"), 1, fan_out, LayerTag::Bias);
        for v in &mut b.data {
            *v = r.random_range(-bound..bound) * cfg.init_scale;
        }
        params.push(w);
        params.push(b);
    }
    Ok(Mlp {
        widths: cfg.widths.clone(),
        params,
    })
}

struct Forward {
    inputs: Vec<f64>,
    pre: [Vec<f64>; 2],
    hidden: [Vec<f64>; 2],
    out: Vec<f64>,
}

impl Mlp {
    fn gather(&self, data: &LabeledDataset, idx: &[usize]) -> Result<Vec<f64>> {
        if data.feature_dim() != self.widths[0] {
            return Err(Error::DimensionMismatch {
                expected: self.widths[0],
                found: data.feature_dim(),
            });
        }
        let mut x = Vec::with_capacity(idx.len() * self.widths[0]);
        for &i in idx {
            x.extend_from_slice(data.sample(i));
        }
        Ok(x)
    }

    fn forward(&self, data: &LabeledDataset, idx: &[usize]) -> Result<Forward> {
        let b = idx.len();
        let w = &self.widths;
        let inputs = self.gather(data, idx)?;
        let mut pre = [Vec::new(), Vec::new()];
        let mut hidden = [Vec::new(), Vec::new()];
        let mut x = &inputs;
        for l in 0..2 {
            let mut z = matmul(false, true, b, w[l + 1], w[l], x, &self.params[2 * l].data);
            add_row_bias(&mut z, &self.params[2 * l + 1].data);
            let mut h = z.clone();
            relu_in_place(&mut h);
            pre[l] = z;
            hidden[l] = h;
            x = &hidden[l];
        }
        let mut out = matmul(false, true, b, w[3], w[2], &hidden[1], &self.params[4].data);
        add_row_bias(&mut out, &self.params[5].data);
        Ok(Forward {
            inputs,
            pre,
            hidden,
            out,
        })
    }

    fn mse(&self, out: &[f64], data: &LabeledDataset, idx: &[usize]) -> (f64, Vec<f64>) {
        let c = self.widths[3];
        let denom = (idx.len() * c) as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; out.len()];
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..c {
                let t = if data.labels[i] == j { 1.0 } else { 0.0 };
                let d = out[r * c + j] - t;
                loss += d * d;
                grad[r * c + j] = 2.0 * d / denom;
            }
        }
        (loss / denom, grad)
    }
}

impl Model for Mlp {
    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn n_classes(&self) -> usize {
        self.widths[3]
    }

    fn logits(&self, data: &LabeledDataset, idx: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward(data, idx)?.out)
    }

    fn loss(&self, data: &LabeledDataset, idx: &[usize]) -> Result<f64> {
        let f = self.forward(data, idx)?;
        Ok(self.mse(&f.out, data, idx).0)
    }

    fn loss_and_grad(&self, data: &LabeledDataset, idx: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let b = idx.len();
        let w = &self.widths;
        let f = self.forward(data, idx)?;
        let (loss, mut delta) = self.mse(&f.out, data, idx);
        let mut grads = vec![Vec::new(); 6];
        for l in (0..3).rev() {
            let (n_in, n_out) = (w[l], w[l + 1]);
            let input = if l == 0 { &f.inputs } else { &f.hidden[l - 1] };
            grads[2 * l] = matmul(true, false, n_out, n_in, b, &delta, input);
            grads[2 * l + 1] = column_sums(&delta, n_out);
            if l > 0 {
                let mut d = vec![0.0; b * n_in];
                gemm(false, false, b, n_in, n_out, 1.0, &delta, &self.params[2 * l].data, 0.0, &mut d);
                relu_backward(&mut d, &f.pre[l - 1]);
                delta = d;
            }
        }
        Ok((loss, grads))
    }

    fn hidden_activations(&self, data: &LabeledDataset, idx: &[usize]) -> Result<(Vec<f64>, usize)> {
        let f = self.forward(data, idx)?;
        let [h1, _] = f.hidden;
        Ok((h1, self.widths[1]))
    }
}
