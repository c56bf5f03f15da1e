use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CheckpointReport, PhaseLabel};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const SUMMARY_COLUMNS: [&str; 11] = [
    "step",
    "layer_id",
    "alpha",
    "d_ks",
    "xmin",
    "n_tail",
    "n_traps",
    "lambda_plus",
    "ks_p",
    "regime",
    "phase",
];

const PHASE_COLUMNS: [&str; 7] = [
    "phase",
    "layer_id",
    "n_snapshots",
    "alpha_mean",
    "alpha_std",
    "traps_mean",
    "traps_std",
];

/// Layer id used for the across-layer average in the phase summary.
pub const MEAN_LAYER: &str = "mean";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Both,
}

impl ReportFormat {
    fn json(self) -> bool {
        matches!(self, ReportFormat::Json | ReportFormat::Both)
    }

    fn csv(self) -> bool {
        matches!(self, ReportFormat::Csv | ReportFormat::Both)
    }
}

/// One `summary.csv` row: an analyzed layer at one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub step: u64,
    pub layer_id: String,
    pub alpha: f64,
    pub d_ks: f64,
    pub xmin: f64,
    pub n_tail: usize,
    pub n_traps: usize,
    pub lambda_plus: f64,
    pub ks_p: f64,
    pub regime: String,
    /// Empty when the trajectory could not be labelled.
    pub phase: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummaryRow {
    pub phase: String,
    pub layer_id: String,
    pub n_snapshots: usize,
    pub alpha_mean: f64,
    pub alpha_std: f64,
    pub traps_mean: f64,
    pub traps_std: f64,
}

pub fn summary_rows(reports: &[CheckpointReport], labels: Option<&[PhaseLabel]>) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let phase = labels.map(|l| l[i].as_str().to_owned()).unwrap_or_default();
        for l in r.analyzed() {
            rows.push(SummaryRow {
                step: r.step,
                layer_id: l.layer_id.clone(),
                alpha: l.pl_fit.alpha,
                d_ks: l.pl_fit.d_ks,
                xmin: l.pl_fit.lambda_min_fit,
                n_tail: l.pl_fit.n_tail,
                n_traps: l.trap_report.n_traps,
                lambda_plus: l.trap_report.mp_fit.lambda_plus,
                ks_p: l.trap_report.mp_fit.p_value,
                regime: l.regime.as_str().to_owned(),
                phase: phase.clone(),
            });
        }
    }
    rows
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// α and trap statistics per (phase, layer), plus an across-layer mean row
/// per phase. Sample standard deviation over snapshots.
pub fn phase_summary(reports: &[CheckpointReport], labels: &[PhaseLabel]) -> Vec<PhaseSummaryRow> {
    let mut out = Vec::new();
    let layer_ids: Vec<String> = {
        let mut ids: Vec<String> = Vec::new();
        for r in reports {
            for l in r.analyzed() {
                if !ids.contains(&l.layer_id) {
                    ids.push(l.layer_id.clone());
                }
            }
        }
        ids
    };
    for phase in PhaseLabel::ALL {
        let in_phase: Vec<&CheckpointReport> = reports
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == phase)
            .map(|(r, _)| r)
            .collect();
        if in_phase.is_empty() {
            continue;
        }
        let mut push = |layer_id: &str, alphas: Vec<f64>, traps: Vec<f64>| {
            if alphas.is_empty() {
                return;
            }
            let (alpha_mean, alpha_std) = mean_std(&alphas);
            let (traps_mean, traps_std) = mean_std(&traps);
            out.push(PhaseSummaryRow {
                phase: phase.as_str().to_owned(),
                layer_id: layer_id.to_owned(),
                n_snapshots: alphas.len(),
                alpha_mean,
                alpha_std,
                traps_mean,
                traps_std,
            });
        };
        for id in &layer_ids {
            let layer = in_phase
                .iter()
                .filter_map(|r| r.analyzed().find(|l| &l.layer_id == id));
            let (alphas, traps) = layer
                .map(|l| (l.pl_fit.alpha, l.trap_report.n_traps as f64))
                .unzip();
            push(id, alphas, traps);
        }
        let (alphas, traps) = in_phase
            .iter()
            .filter_map(|r| r.mean_alpha().map(|a| (a, r.mean_traps())))
            .unzip();
        push(MEAN_LAYER, alphas, traps);
    }
    out
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::from(e))
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, &SUMMARY_COLUMNS, rows)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_owned()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(|e| csv_err(path, e))
}

#[derive(Serialize)]
struct SnapshotEntry<'a> {
    phase: Option<PhaseLabel>,
    #[serde(flatten)]
    report: &'a CheckpointReport,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    schema_version: u32,
    snapshots: Vec<SnapshotEntry<'a>>,
    phase_summary: Option<Vec<PhaseSummaryRow>>,
}

/// Writes `report.json` and/or `summary.csv` plus `phase_summary.csv` into
/// `dir`, returning the paths written.
pub fn emit_report(
    reports: &[CheckpointReport],
    labels: Option<&[PhaseLabel]>,
    dir: &Path,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    if let Some(l) = labels {
        if l.len() != reports.len() {
            return Err(Error::BadParams(format!(
                "{} labels for {} snapshots",
                l.len(),
                reports.len()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = labels.map(|l| phase_summary(reports, l));
    let mut written = Vec::new();
    if format.json() {
        let file = ReportFile {
            schema_version: REPORT_SCHEMA_VERSION,
            snapshots: reports
                .iter()
                .enumerate()
                .map(|(i, report)| SnapshotEntry {
                    phase: labels.map(|l| l[i]),
                    report,
                })
                .collect(),
            phase_summary: summary.clone(),
        };
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::BadParams(format!("report serialization: {e}")))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    if format.csv() {
        let path = dir.join("summary.csv");
        write_summary_csv(&path, &summary_rows(reports, labels))?;
        written.push(path);
        if let Some(s) = &summary {
            let path = dir.join("phase_summary.csv");
            write_csv(&path, &PHASE_COLUMNS, s)?;
            written.push(path);
        }
    }
    Ok(written)
}
