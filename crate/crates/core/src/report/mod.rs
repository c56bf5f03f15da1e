//! Per-checkpoint layer analysis, phase labelling along a trajectory, and
//! report/plot emission.

mod emit;
mod svg;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{weight_metrics, MetricRecord};
use crate::powerlaw::{classify_regime, fit_powerlaw, HtsrRegime, PLFit, PLOptions, PLWarning, RegimeBands};
use crate::rmt::{TrimPolicy, TW_MARGIN};
use crate::rng::derive;
use crate::spectral::esd;
use crate::store::{CheckpointBundle, WeightMatrix};
use crate::traps::{detect_traps, TrapConfig, TrapReport};

pub use emit::{
    emit_report, phase_summary, read_summary_csv, summary_rows, write_summary_csv, PhaseSummaryRow,
    ReportFormat, SummaryRow, REPORT_SCHEMA_VERSION,
};
pub use svg::{emit_esd_plot, emit_plots, line_plot, LinePlot, Series, Style};

pub const DEFAULT_MIN_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Layers whose smaller dimension is below this are skipped.
    pub min_dim: usize,
    pub seed: u64,
    pub n_shuffles: usize,
    pub trim: TrimPolicy,
    pub tw_margin: f64,
    pub powerlaw: PLOptions,
    pub bands: RegimeBands,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            min_dim: DEFAULT_MIN_DIM,
            seed: 0,
            n_shuffles: 1,
            trim: TrimPolicy::default(),
            tw_margin: TW_MARGIN,
            powerlaw: PLOptions::default(),
            bands: RegimeBands::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_id: String,
    pub pl_fit: PLFit,
    pub trap_report: TrapReport,
    pub regime: HtsrRegime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LayerOutcome {
    Analyzed(LayerReport),
    Skipped { layer_id: String, reason: String },
    Failed { layer_id: String, error: String },
}

impl LayerOutcome {
    pub fn layer_id(&self) -> &str {
        match self {
            LayerOutcome::Analyzed(r) => &r.layer_id,
            LayerOutcome::Skipped { layer_id, .. } | LayerOutcome::Failed { layer_id, .. } => layer_id,
        }
    }

    pub fn report(&self) -> Option<&LayerReport> {
        match self {
            LayerOutcome::Analyzed(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub step: u64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub layers: Vec<LayerOutcome>,
    pub metrics: MetricRecord,
}

impl CheckpointReport {
    pub fn analyzed(&self) -> impl Iterator<Item = &LayerReport> {
        self.layers.iter().filter_map(LayerOutcome::report)
    }

    /// Mean α over analyzed layers.
    pub fn mean_alpha(&self) -> Option<f64> {
        mean(self.analyzed().map(|r| r.pl_fit.alpha))
    }

    /// Mean trap count over analyzed layers, zero-trap layers included.
    pub fn mean_traps(&self) -> f64 {
        mean(self.analyzed().map(|r| r.trap_report.n_traps as f64)).unwrap_or(0.0)
    }

    pub fn point(&self) -> TrajectoryPoint {
        TrajectoryPoint {
            step: self.step,
            train_acc: self.train_acc,
            test_acc: self.test_acc,
            mean_alpha: self.mean_alpha(),
            mean_traps: self.mean_traps(),
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// ESD, power-law fit, regime and trap detection for one matrix.
pub fn analyze_layer(w: &WeightMatrix, cfg: &AnalysisConfig, seed: u64) -> Result<LayerReport> {
    let spec = esd(w)?;
    let mut pl_fit = fit_powerlaw(&spec, &cfg.powerlaw)?;
    let trap_report = detect_traps(
        w,
        &TrapConfig {
            seed,
            n_shuffles: cfg.n_shuffles,
            trim: cfg.trim,
            tw_margin: cfg.tw_margin,
        },
    )?;
    if trap_report.n_traps > 0 {
        pl_fit.warning = PLWarning::TrapContaminated;
    }
    Ok(LayerReport {
        layer_id: w.layer_id().to_owned(),
        regime: classify_regime(pl_fit.alpha, &cfg.bands),
        pl_fit,
        trap_report,
    })
}

/// Analyzes every eligible layer of `bundle` in parallel. Per-layer failures
/// are recorded rather than aborting the checkpoint. Metrics cover the
/// weight-only quantities; callers with a live model can replace them.
pub fn analyze_checkpoint(bundle: &CheckpointBundle, cfg: &AnalysisConfig) -> Result<CheckpointReport> {
    bundle.validate()?;
    let layers = bundle
        .layers
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let id = w.layer_id().to_owned();
            if !w.tag().is_weight() {
                return LayerOutcome::Skipped {
                    layer_id: id,
                    reason: "bias".into(),
                };
            }
            if w.cols() < cfg.min_dim {
                return LayerOutcome::Skipped {
                    layer_id: id,
                    reason: "below min_dim".into(),
                };
            }
            match analyze_layer(w, cfg, derive(cfg.seed, i as u64)) {
                Ok(r) => LayerOutcome::Analyzed(r),
                Err(e) => LayerOutcome::Failed {
                    layer_id: id,
                    error: e.to_string(),
                },
            }
        })
        .collect();
    Ok(CheckpointReport {
        step: bundle.step,
        train_acc: bundle.train_acc,
        test_acc: bundle.test_acc,
        layers,
        metrics: weight_metrics(bundle),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseLabel {
    PreGrokking,
    Grokking,
    AntiGrokking,
    Indeterminate,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 4] = [
        PhaseLabel::PreGrokking,
        PhaseLabel::Grokking,
        PhaseLabel::AntiGrokking,
        PhaseLabel::Indeterminate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::PreGrokking => "pre_grokking",
            PhaseLabel::Grokking => "grokking",
            PhaseLabel::AntiGrokking => "anti_grokking",
            PhaseLabel::Indeterminate => "indeterminate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// Train accuracy counted as fitted.
    pub train_fit: f64,
    pub grok_threshold: f64,
    /// Anti-grokking needs test accuracy at or below this share of its running max.
    pub drop_factor: f64,
    /// Consecutive snapshots with `mean_traps >= 1` required for anti-grokking.
    pub trap_persistence: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            train_fit: 0.99,
            grok_threshold: 0.8,
            drop_factor: 0.8,
            trap_persistence: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub mean_alpha: Option<f64>,
    pub mean_traps: f64,
}

/// Labels each snapshot from itself, earlier snapshots, and the running max
/// test accuracy. Anti-grokking is only reachable after a grokking label.
pub fn classify_phases(traj: &[TrajectoryPoint], cfg: &PhaseConfig) -> Result<Vec<PhaseLabel>> {
    if traj.windows(2).any(|w| w[1].step < w[0].step) {
        return Err(Error::BadParams("trajectory is not time-ordered".into()));
    }
    let mut labels = Vec::with_capacity(traj.len());
    let mut max_test = f64::NEG_INFINITY;
    let mut trap_run = 0usize;
    let mut grokked = false;
    for pt in traj {
        let (train, test) = match (pt.train_acc, pt.test_acc) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::MissingAccuracy { step: pt.step }),
        };
        max_test = max_test.max(test);
        trap_run = if pt.mean_traps >= 1.0 { trap_run + 1 } else { 0 };
        let clean = pt.mean_traps == 0.0;
        let label = if grokked
            && trap_run >= cfg.trap_persistence.max(1)
            && test <= cfg.drop_factor * max_test
        {
            PhaseLabel::AntiGrokking
        } else if clean && test >= cfg.grok_threshold {
            PhaseLabel::Grokking
        } else if clean && train >= cfg.train_fit && test < cfg.grok_threshold {
            PhaseLabel::PreGrokking
        } else {
            PhaseLabel::Indeterminate
        };
        if label == PhaseLabel::AntiGrokking {
            debug_assert!(pt.mean_traps >= 1.0);
        }
        grokked |= label == PhaseLabel::Grokking;
        labels.push(label);
    }
    Ok(labels)
}

/// Analyzes a sequence of checkpoints and labels their phases when every
/// snapshot carries accuracies.
pub fn analyze_trajectory(
    bundles: &[CheckpointBundle],
    cfg: &AnalysisConfig,
    phases: &PhaseConfig,
) -> Result<(Vec<CheckpointReport>, Option<Vec<PhaseLabel>>)> {
    let reports = bundles
        .iter()
        .map(|b| analyze_checkpoint(b, cfg))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<TrajectoryPoint> = reports.iter().map(CheckpointReport::point).collect();
    let labels = if points.iter().all(|p| p.train_acc.is_some() && p.test_acc.is_some()) {
        Some(classify_phases(&points, phases)?)
    } else {
        None
    };
    Ok((reports, labels))
}
