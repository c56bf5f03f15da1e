//! Minimal deterministic SVG line/scatter plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CheckpointReport, PhaseLabel};
use crate::error::{Error, Result};
use crate::powerlaw::PLFit;
use crate::rmt::{mp_density, MPFit};
use crate::spectral::Spectrum;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            style: Style::Line,
        }
    }

    pub fn markers(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            style: Style::Markers,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Dashed reference lines at fixed y, with labels.
    pub hlines: Vec<(f64, String)>,
    /// Dashed reference lines at fixed x, with labels.
    pub vlines: Vec<(f64, String)>,
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(log: bool, values: impl Iterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let t = if log { v.log10() } else { v };
            if t.is_finite() {
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
            (lo, hi) = (lo - pad, hi + pad);
        } else if !log {
            let pad = 0.04 * (hi - lo);
            (lo, hi) = (lo - pad, hi + pad);
        }
        Self { log, lo, hi, px_lo, px_hi }
    }

    fn t(&self, v: f64) -> Option<f64> {
        let t = if self.log { v.log10() } else { v };
        t.is_finite().then(|| self.px_lo + (t - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let step = ((b - a) / 8).max(1);
            (a..=b)
                .step_by(step as usize)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            let span = self.hi - self.lo;
            let raw = span / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| span / s <= 6.0)
                .unwrap_or(10.0 * mag);
            let mut v = (self.lo / step).ceil() * step;
            let mut out = Vec::new();
            while v <= self.hi + 1e-9 * step {
                let label = format_tick(v, step);
                out.push((v, label));
                v += step;
            }
            out
        }
    }
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let v = if v.abs() < 1e-12 * step { 0.0 } else { v };
    format!("{v:.decimals$}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    pub fn render(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.vlines.iter().map(|v| v.0));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.hlines.iter().map(|v| v.0));
        let ax = Axis::new(self.log_x, xs, LEFT, W - RIGHT);
        let ay = Axis::new(self.log_y, ys, H - BOTTOM, TOP);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            esc(&self.title)
        );
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for (v, label) in ax.ticks() {
            if let Some(px) = ax.t(v) {
                let _ = writeln!(
                    s,
                    r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.1}" stroke="#444"/><text x="{px:.2}" y="{:.1}" text-anchor="middle">{label}</text>"##,
                    y0 + 5.0,
                    y0 + 18.0
                );
            }
        }
        for (v, label) in ay.ticks() {
            if let Some(py) = ay.t(v) {
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.1}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#444"/><text x="{:.1}" y="{:.2}" text-anchor="end">{label}</text>"##,
                    x0 - 5.0,
                    x0 - 8.0,
                    py + 4.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 15.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(&self.y_label)
        );
        for (v, label) in &self.hlines {
            if let Some(py) = ay.t(*v) {
                let _ = writeln!(
                    s,
                    r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#555" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.2}" fill="#555">{}</text>"##,
                    x1 - 4.0,
                    py - 4.0,
                    esc(label)
                );
            }
        }
        for (v, label) in &self.vlines {
            if let Some(px) = ax.t(*v) {
                let _ = writeln!(
                    s,
                    r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{y1}" stroke="#555" stroke-dasharray="4 3"/><text x="{:.2}" y="{:.1}" fill="#555">{}</text>"##,
                    px + 3.0,
                    y1 + 12.0,
                    esc(label)
                );
            }
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter_map(|&(x, y)| Some((ax.t(x)?, ay.t(y)?)))
                .collect();
            match series.style {
                Style::Line if pts.len() > 1 => {
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
                        path.join(" ")
                    );
                }
                _ => {
                    for (x, y) in &pts {
                        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.2" fill="{color}"/>"#);
                    }
                }
            }
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="12" height="3" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                x1 + 10.0,
                ly - 4.0,
                x1 + 26.0,
                ly,
                esc(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str) -> LinePlot {
    LinePlot {
        title: title.to_owned(),
        x_label: x_label.to_owned(),
        y_label: y_label.to_owned(),
        ..LinePlot::default()
    }
}

/// Per-layer values over steps, one series per layer id in first-seen order.
fn per_layer(reports: &[CheckpointReport], value: impl Fn(&super::LayerReport) -> f64) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in reports {
        let x = r.step as f64 + 1.0;
        for l in r.analyzed() {
            let pt = (x, value(l));
            match out.iter_mut().find(|s| s.name == l.layer_id) {
                Some(s) => s.points.push(pt),
                None => out.push(Series::line(l.layer_id.clone(), vec![pt])),
            }
        }
    }
    out
}

/// Accuracy, α and trap-count trajectories. Writes nothing for an empty input.
pub fn emit_plots(
    reports: &[CheckpointReport],
    labels: Option<&[PhaseLabel]>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let step_label = "step + 1";

    let acc: Vec<(&str, Vec<(f64, f64)>)> = [
        ("train", reports.iter().filter_map(|r| Some((r.step as f64 + 1.0, r.train_acc?))).collect()),
        ("test", reports.iter().filter_map(|r| Some((r.step as f64 + 1.0, r.test_acc?))).collect()),
    ]
    .into_iter()
    .filter(|(_, p): &(&str, Vec<(f64, f64)>)| !p.is_empty())
    .collect();
    if !acc.is_empty() {
        let mut plot = line_plot("Accuracy", step_label, "accuracy");
        plot.log_x = true;
        plot.series = acc.into_iter().map(|(n, p)| Series::line(n, p)).collect();
        if let Some(labels) = labels {
            // Mark the first snapshot of each phase change.
            for (i, l) in labels.iter().enumerate() {
                if i == 0 || labels[i - 1] != *l {
                    plot.vlines.push((reports[i].step as f64 + 1.0, l.as_str().to_owned()));
                }
            }
        }
        let path = dir.join("accuracy.svg");
        plot.write(&path)?;
        written.push(path);
    }

    let mut alpha = line_plot("Power-law exponent per layer", step_label, "alpha");
    alpha.log_x = true;
    alpha.series = per_layer(reports, |l| l.pl_fit.alpha);
    alpha.series.push(Series::line(
        "mean",
        reports
            .iter()
            .filter_map(|r| Some((r.step as f64 + 1.0, r.mean_alpha()?)))
            .collect(),
    ));
    alpha.hlines.push((2.0, "alpha = 2".into()));
    let path = dir.join("alpha.svg");
    alpha.write(&path)?;
    written.push(path);

    let mut traps = line_plot("Correlation traps per layer", step_label, "traps");
    traps.log_x = true;
    traps.series = per_layer(reports, |l| l.trap_report.n_traps as f64);
    traps.series.push(Series::line(
        "mean",
        reports.iter().map(|r| (r.step as f64 + 1.0, r.mean_traps())).collect(),
    ));
    let path = dir.join("traps.svg");
    traps.write(&path)?;
    written.push(path);
    Ok(written)
}

/// Log-binned density estimate over `[lo, hi]`.
fn log_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64)> {
    let (a, b) = (lo.ln(), hi.ln());
    let width = (b - a) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v >= lo && v <= hi {
            let k = (((v.ln() - a) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let n = values.len() as f64;
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| {
            let (l, r) = ((a + k as f64 * width).exp(), (a + (k + 1) as f64 * width).exp());
            ((l * r).sqrt(), c as f64 / (n * (r - l)))
        })
        .collect()
}

/// Log-log ESD with the fitted power-law tail and the xmin/λmax markers, plus
/// the shuffled ESD against its fitted MP density when given.
pub fn emit_esd_plot(
    path: &Path,
    layer_id: &str,
    spec: &Spectrum,
    fit: &PLFit,
    shuffled: Option<(&Spectrum, &MPFit)>,
) -> Result<()> {
    let evs: Vec<f64> = spec.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
    if evs.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut lo = evs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = evs.iter().copied().fold(0.0, f64::max);
    if let Some((s, _)) = shuffled {
        for &v in s.eigenvalues.iter().filter(|&&v| v > 0.0) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let bins = (evs.len() as f64).sqrt().ceil().clamp(10.0, 60.0) as usize;
    let mut plot = line_plot(&format!("ESD of {layer_id}"), "eigenvalue", "density");
    plot.log_x = true;
    plot.log_y = true;
    plot.series.push(Series::markers("ESD", log_histogram(&evs, lo, hi * (1.0 + 1e-12), bins)));
    let frac = fit.n_tail as f64 / evs.len() as f64;
    let (xmin, a) = (fit.lambda_min_fit, fit.alpha);
    let tail: Vec<(f64, f64)> = (0..=40)
        .map(|i| {
            let x = xmin * (fit.lambda_max / xmin).powf(i as f64 / 40.0);
            (x, frac * (a - 1.0) / xmin * (x / xmin).powf(-a))
        })
        .collect();
    plot.series.push(Series::line(format!("PL fit, alpha {a:.2}"), tail));
    if let Some((s, mp)) = shuffled {
        let sv: Vec<f64> = s.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
        plot.series.push(Series::markers("shuffled ESD", log_histogram(&sv, lo, hi * (1.0 + 1e-12), bins)));
        let (l, r) = (mp.lambda_minus.max(lo), mp.lambda_plus);
        let curve: Vec<(f64, f64)> = (1..200)
            .map(|i| {
                let x = l + (r - l) * i as f64 / 200.0;
                (x, mp_density(x, mp.sigma_mp, mp.q))
            })
            .filter(|p| p.1 > 0.0)
            .collect();
        plot.series.push(Series::line("MP fit (shuffled)", curve));
    }
    plot.vlines.push((xmin, "xmin".into()));
    plot.vlines.push((fit.lambda_max, "lambda max".into()));
    plot.write(path)
}
