//! The comparison metrics tracked next to the spectral ones: global weight
//! norm, activation sparsity, absolute weight entropy and an approximate
//! local circuit complexity.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::Model;
use crate::rng::{derive, rng};
use crate::store::{CheckpointBundle, LabeledDataset};

/// Default sparsity threshold: counts exact ReLU zeros.
pub const DEFAULT_TAU: f64 = 1e-12;
pub const DEFAULT_MASK_FRAC: f64 = 0.10;

/// Metrics for one snapshot. The activation- and output-based entries need a
/// model and data, so they are absent when only weights are available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub l2_norm: f64,
    pub activation_sparsity: Option<f64>,
    pub weight_entropy: f64,
    pub circuit_complexity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub tau: f64,
    pub mask_frac: f64,
    pub lc_repeats: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            mask_frac: DEFAULT_MASK_FRAC,
            lc_repeats: 1,
            seed: 0,
        }
    }
}

/// `sqrt` of the summed squared Frobenius norms of every tensor, biases included.
pub fn l2_norm(bundle: &CheckpointBundle) -> f64 {
    bundle
        .layers
        .iter()
        .map(|l| l.frobenius_sq())
        .sum::<f64>()
        .sqrt()
}

/// Fraction of entries of a `T x n` activation table strictly below `tau`.
pub fn activation_sparsity(acts: &[f64], width: usize, tau: f64) -> Result<f64> {
    if width == 0 || acts.is_empty() || acts.len() % width != 0 {
        return Err(Error::BadParams(format!(
            "activation table of {} entries is not T x {width} with T >= 1",
            acts.len()
        )));
    }
    let n = width as f64;
    let per_row: Vec<f64> = acts
        .chunks_exact(width)
        .map(|row| row.iter().filter(|&&b| b < tau).count() as f64 / n)
        .collect();
    Ok(per_row.iter().sum::<f64>() / per_row.len() as f64)
}

/// `-sum |w| ln |w|`, with `0 ln 0 = 0`.
pub fn abs_weight_entropy(entries: &[f64]) -> f64 {
    -entries
        .iter()
        .map(|w| w.abs())
        .filter(|&a| a > 0.0)
        .map(|a| a * a.ln())
        .sum::<f64>()
}

/// Absolute weight entropy summed over the weight (non-bias) tensors.
pub fn bundle_weight_entropy(bundle: &CheckpointBundle) -> f64 {
    bundle
        .weight_layers()
        .map(|l| abs_weight_entropy(l.entries()))
        .sum()
}

fn log_softmax(row: &[f64], out: &mut Vec<f64>) -> Result<()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    if !lse.is_finite() {
        return Err(Error::DegenerateProbability);
    }
    out.clear();
    out.extend(row.iter().map(|&l| l - lse));
    Ok(())
}

/// Summed KL divergence between the two models' softmax outputs over `data`.
pub fn output_kl<M: Model>(reference: &M, perturbed: &M, data: &LabeledDataset) -> Result<f64> {
    const CHUNK: usize = 512;
    let c = reference.n_classes();
    let all: Vec<usize> = (0..data.len()).collect();
    let parts = all
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            let a = reference.logits(data, chunk)?;
            let b = perturbed.logits(data, chunk)?;
            let (mut lp, mut lq) = (Vec::with_capacity(c), Vec::with_capacity(c));
            let mut kls = Vec::with_capacity(chunk.len());
            for (ra, rb) in a.chunks_exact(c).zip(b.chunks_exact(c)) {
                log_softmax(ra, &mut lp)?;
                log_softmax(rb, &mut lq)?;
                let kl: f64 = lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum();
                kls.push(kl.max(0.0));
            }
            Ok(kls)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(pairwise_sum(&parts.concat()))
}

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Zeroes a seeded uniform `mask_frac` share of all weight (non-bias) entries.
pub fn mask_weights<M: Model>(model: &M, mask_frac: f64, seed: u64) -> Result<M> {
    if !(0.0..=1.0).contains(&mask_frac) {
        return Err(Error::BadParams(format!("mask_frac {mask_frac} outside [0, 1]")));
    }
    let mut masked = model.clone();
    let sizes: Vec<usize> = masked
        .params()
        .iter()
        .map(|p| if p.tag.is_weight() { p.data.len() } else { 0 })
        .collect();
    let total: usize = sizes.iter().sum();
    let k = (mask_frac * total as f64).round() as usize;
    let mut picked = index::sample(&mut rng(seed), total, k).into_vec();
    picked.sort_unstable();
    let mut picked = picked.into_iter().peekable();
    let mut offset = 0;
    for (p, &n) in masked.params_mut().iter_mut().zip(&sizes) {
        while let Some(&i) = picked.peek() {
            if i >= offset + n {
                break;
            }
            p.data[i - offset] = 0.0;
            picked.next();
        }
        offset += n;
    }
    Ok(masked)
}

/// Output KL after masking `mask_frac` of the weights, averaged over `repeats`
/// independent masks (one mask when `repeats == 1`).
pub fn local_circuit_complexity<M: Model>(
    model: &M,
    data: &LabeledDataset,
    mask_frac: f64,
    seed: u64,
    repeats: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    let repeats = repeats.max(1);
    let mut total = 0.0;
    for r in 0..repeats {
        let s = if r == 0 { seed } else { derive(seed, r as u64) };
        let masked = mask_weights(model, mask_frac, s)?;
        total += output_kl(model, &masked, data)?;
    }
    Ok(total / repeats as f64)
}

/// All four metrics for a live model evaluated on its training data.
pub fn progress_metrics<M: Model>(
    model: &M,
    step: u64,
    train: &LabeledDataset,
    cfg: &MetricConfig,
) -> Result<MetricRecord> {
    let bundle = model.to_bundle(step)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let (acts, width) = model.hidden_activations(train, &all)?;
    Ok(MetricRecord {
        step,
        l2_norm: l2_norm(&bundle),
        activation_sparsity: Some(activation_sparsity(&acts, width, cfg.tau)?),
        weight_entropy: bundle_weight_entropy(&bundle),
        circuit_complexity: Some(local_circuit_complexity(
            model,
            train,
            cfg.mask_frac,
            cfg.seed,
            cfg.lc_repeats,
        )?),
    })
}

/// The weight-only metrics, for checkpoints without a model or data.
pub fn weight_metrics(bundle: &CheckpointBundle) -> MetricRecord {
    MetricRecord {
        step: bundle.step,
        l2_norm: l2_norm(bundle),
        activation_sparsity: None,
        weight_entropy: bundle_weight_entropy(bundle),
        circuit_complexity: None,
    }
}
