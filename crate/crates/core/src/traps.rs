//! Correlation traps: outliers of an elementwise-shuffled layer beyond the
//! fitted Marchenko–Pastur edge, plus the planted-spike (BBP) machinery.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmt::{bulk_edge_threshold, fit_mp, MPFit, TrimPolicy, TW_MARGIN};
use crate::rng;
use crate::spectral::{esd, gaussian_matrix, shuffle_elements};
use crate::store::WeightMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    pub seed: u64,
    pub n_shuffles: usize,
    pub trim: TrimPolicy,
    pub tw_margin: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_shuffles: 1,
            trim: TrimPolicy::default(),
            tw_margin: TW_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapReport {
    pub layer_id: String,
    /// MP fit of the shuffled spectrum.
    pub mp_fit: MPFit,
    pub lambda_threshold: f64,
    /// Trap eigenvalues, descending.
    pub traps: Vec<f64>,
    pub n_traps: usize,
    pub shuffle_seed: u64,
    pub lambda_max_shuffled: f64,
}

fn shuffle_seed(cfg: &TrapConfig, index: usize) -> u64 {
    if index == 0 {
        cfg.seed
    } else {
        rng::derive(cfg.seed, index as u64)
    }
}

/// Shuffle, fit MP to the shuffled ESD, and count eigenvalues past the
/// Tracy–Widom-buffered edge. With several shuffles the one with the most traps
/// is reported (first one on ties).
pub fn detect_traps(w: &WeightMatrix, cfg: &TrapConfig) -> Result<TrapReport> {
    let mut best: Option<TrapReport> = None;
    for i in 0..cfg.n_shuffles.max(1) {
        let seed = shuffle_seed(cfg, i);
        let spec = esd(&shuffle_elements(w, seed))?;
        let mp_fit = fit_mp(&spec, cfg.trim)?;
        let lambda_threshold = bulk_edge_threshold(&mp_fit, w.cols(), cfg.tw_margin);
        let traps: Vec<f64> = spec
            .eigenvalues
            .iter()
            .copied()
            .take_while(|&l| l > lambda_threshold)
            .collect();
        let report = TrapReport {
            layer_id: w.layer_id().to_owned(),
            mp_fit,
            lambda_threshold,
            n_traps: traps.len(),
            traps,
            shuffle_seed: seed,
            lambda_max_shuffled: spec.lambda_max(),
        };
        if best.as_ref().map_or(true, |b| report.n_traps > b.n_traps) {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one shuffle"))
}

/// Overwrites one uniformly chosen entry with `±theta·√N` (random sign).
pub fn plant_spike(w: &WeightMatrix, theta: f64, seed: u64) -> Result<WeightMatrix> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::BadParams(format!("theta must be >= 0, got {theta}")));
    }
    let mut r = rng::rng(seed);
    let idx = r.random_range(0..w.entries().len());
    let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
    let mut entries = w.entries().to_vec();
    entries[idx] = sign * theta * (w.rows() as f64).sqrt();
    w.with_entries(entries)
}

/// `theta_hat = max|W_ij| / √N`; holds iff `theta_hat > σ(1 + √γ)`.
pub fn single_entry_condition(w: &WeightMatrix, sigma: f64, gamma: f64) -> (bool, f64) {
    let max_abs = w.entries().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let theta_hat = max_abs / (w.rows() as f64).sqrt();
    (theta_hat > critical_theta(sigma, gamma), theta_hat)
}

pub fn critical_theta(sigma: f64, gamma: f64) -> f64 {
    sigma * (1.0 + gamma.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbpParams {
    /// `M/N`, the reciprocal of the aspect ratio `Q`.
    pub gamma: f64,
    pub sigma: f64,
    pub theta_c: f64,
}

impl BbpParams {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) || !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::BadParams(format!(
                "need gamma > 0 and sigma > 0, got gamma={gamma} sigma={sigma}"
            )));
        }
        Ok(Self {
            gamma,
            sigma,
            theta_c: critical_theta(sigma, gamma),
        })
    }

    /// Parameters paired with a canonical `N x M` layer, `γ = M/N = 1/Q`.
    pub fn for_shape(rows: usize, cols: usize, sigma: f64) -> Result<Self> {
        Self::new(cols as f64 / rows as f64, sigma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbpRow {
    pub theta_ratio: f64,
    pub theta: f64,
    pub mean_lambda_max: f64,
    pub trap_rate: f64,
}

/// Monte-Carlo sweep over planted-spike strengths given as multiples of `θ_c`.
///
/// Each cell draws an `N x round(γN)` Gaussian layer with scale `σ`, plants a
/// single spike of strength `ratio·θ_c`, and runs [`detect_traps`].
pub fn bbp_sweep(
    params: &BbpParams,
    n: usize,
    theta_ratios: &[f64],
    n_seeds: usize,
    cfg: &TrapConfig,
) -> Result<Vec<BbpRow>> {
    let m = ((params.gamma * n as f64).round() as usize).max(1);
    if m > n {
        return Err(Error::BadParams(format!(
            "gamma must be <= 1 so that the layer stays canonical, got {}",
            params.gamma
        )));
    }
    if theta_ratios.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::BadParams("theta grid values must be >= 0".into()));
    }
    theta_ratios
        .iter()
        .enumerate()
        .map(|(gi, &ratio)| {
            let theta = ratio * params.theta_c;
            let cells = (0..n_seeds)
                .into_par_iter()
                .map(|s| {
                    let base = rng::derive(cfg.seed, s as u64);
                    let w = gaussian_matrix("bbp", n, m, params.sigma, base)?;
                    let w = plant_spike(&w, theta, rng::derive(base, 1 + gi as u64))?;
                    let cell_cfg = TrapConfig {
                        seed: rng::derive(base, 1000 + gi as u64),
                        ..*cfg
                    };
                    let r = detect_traps(&w, &cell_cfg)?;
                    Ok((r.lambda_max_shuffled, r.n_traps > 0))
                })
                .collect::<Result<Vec<_>>>()?;
            let k = cells.len().max(1) as f64;
            Ok(BbpRow {
                theta_ratio: ratio,
                theta,
                mean_lambda_max: cells.iter().map(|c| c.0).sum::<f64>() / k,
                trap_rate: cells.iter().filter(|c| c.1).count() as f64 / k,
            })
        })
        .collect()
}
