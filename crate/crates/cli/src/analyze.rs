use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use spectrascope_core::lab::{RunContext, RUN_FILE};
use spectrascope_core::metrics::{MetricConfig, DEFAULT_MASK_FRAC, DEFAULT_TAU};
use spectrascope_core::powerlaw::PLOptions;
use spectrascope_core::report::{
    analyze_checkpoint, classify_phases, emit_esd_plot, emit_plots, emit_report, AnalysisConfig,
    CheckpointReport, PhaseConfig, PhaseLabel, ReportFormat, DEFAULT_MIN_DIM,
};
use spectrascope_core::rmt::{fit_mp, TrimPolicy, TW_MARGIN};
use spectrascope_core::spectral::{esd, shuffle_elements};
use spectrascope_core::{load_manifest, CheckpointBundle, Error};

use crate::{Failure, Globals};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// A checkpoint directory, its manifest.json, or a run directory.
    path: PathBuf,
    /// Skip layers whose smaller dimension is below this.
    #[arg(long, default_value_t = DEFAULT_MIN_DIM)]
    min_dim: usize,
    /// Independent shuffles per layer for trap detection (the max count is kept).
    #[arg(long, default_value_t = 1)]
    n_shuffles: usize,
    /// Tracy–Widom margin C in λ+(1 + C·M^(-2/3)).
    #[arg(long, default_value_t = TW_MARGIN)]
    tw_margin: f64,
    /// Fraction of the largest shuffled eigenvalues left out of the MP fit.
    #[arg(long, default_value_t = TrimPolicy::default().top_fraction)]
    trim: f64,
    /// Smallest power-law tail considered when scanning xmin.
    #[arg(long, default_value_t = PLOptions::default().min_tail)]
    min_tail: usize,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Also write SVG trajectory plots and ESD plots of the last snapshot.
    #[arg(long)]
    plots: bool,
    #[arg(long, default_value_t = PhaseConfig::default().grok_threshold)]
    grok_threshold: f64,
    /// Anti-grokking needs test accuracy at or below this share of its running max.
    #[arg(long, default_value_t = PhaseConfig::default().drop_factor)]
    drop_factor: f64,
    /// Consecutive snapshots with mean traps >= 1 needed for anti-grokking.
    #[arg(long, default_value_t = PhaseConfig::default().trap_persistence)]
    trap_persistence: usize,
    /// For run directories: rebuild the model and data to add activation
    /// sparsity and local circuit complexity.
    #[arg(long)]
    full_metrics: bool,
    /// Sparsity threshold.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Share of weights zeroed for local circuit complexity.
    #[arg(long, default_value_t = DEFAULT_MASK_FRAC)]
    mask_frac: f64,
    /// Masks averaged per local circuit complexity value.
    #[arg(long, default_value_t = 1)]
    lc_repeats: usize,
    #[arg(long, env = "MNIST_DIR", default_value = "data/mnist")]
    mnist: PathBuf,
}

fn load_snapshots(path: &Path) -> Result<(Vec<CheckpointBundle>, bool), Failure> {
    if path.join(RUN_FILE).is_file() {
        let info = spectrascope_core::lab::load_run(path)?;
        let mut out = Vec::new();
        for rec in &info.records {
            let Some(dir) = &rec.dir else { continue };
            let mut b = load_manifest(&path.join(dir))?;
            b.train_acc = b.train_acc.or(Some(rec.train_acc));
            b.test_acc = b.test_acc.or(Some(rec.test_acc));
            out.push(b);
        }
        Ok((out, true))
    } else if path.exists() {
        Ok((vec![load_manifest(path)?], false))
    } else {
        Err(Error::MissingFile(path.to_owned()).into())
    }
}

pub fn run(g: &Globals, a: AnalyzeArgs) -> Result<(), Failure> {
    let (bundles, is_run) = load_snapshots(&a.path)?;
    let cfg = AnalysisConfig {
        min_dim: a.min_dim,
        seed: g.seed,
        n_shuffles: a.n_shuffles,
        trim: TrimPolicy {
            top_fraction: a.trim,
        },
        tw_margin: a.tw_margin,
        powerlaw: PLOptions {
            min_tail: a.min_tail,
            ..PLOptions::default()
        },
        ..AnalysisConfig::default()
    };
    let ctx = if a.full_metrics && is_run {
        Some(RunContext::open(&a.path, &a.mnist)?)
    } else {
        None
    };
    let metric_cfg = MetricConfig {
        tau: a.tau,
        mask_frac: a.mask_frac,
        lc_repeats: a.lc_repeats,
        seed: g.seed,
    };
    let mut reports: Vec<CheckpointReport> = Vec::with_capacity(bundles.len());
    for b in &bundles {
        let mut r = analyze_checkpoint(b, &cfg)?;
        if let Some(ctx) = &ctx {
            r.metrics = ctx.load(b)?.metrics(b.step, &ctx.train, &metric_cfg)?;
        }
        eprintln!("analyzed step {}", b.step);
        reports.push(r);
    }
    let phase_cfg = PhaseConfig {
        grok_threshold: a.grok_threshold,
        drop_factor: a.drop_factor,
        trap_persistence: a.trap_persistence,
        ..PhaseConfig::default()
    };
    let points: Vec<_> = reports.iter().map(CheckpointReport::point).collect();
    let labels: Option<Vec<PhaseLabel>> = if points.iter().all(|p| p.train_acc.is_some() && p.test_acc.is_some()) {
        Some(classify_phases(&points, &phase_cfg)?)
    } else {
        None
    };
    let format = match a.format {
        Format::Json => ReportFormat::Json,
        Format::Csv => ReportFormat::Csv,
        Format::Both => ReportFormat::Both,
    };
    let mut written = emit_report(&reports, labels.as_deref(), &g.out, format)?;
    if a.plots {
        let plot_dir = g.out.join("plots");
        written.extend(emit_plots(&reports, labels.as_deref(), &plot_dir)?);
        if let (Some(b), Some(r)) = (bundles.last(), reports.last()) {
            for l in r.analyzed() {
                let w = b.layer(&l.layer_id).expect("analyzed layer exists");
                let spec = esd(w)?;
                let shuffled = esd(&shuffle_elements(w, l.trap_report.shuffle_seed))?;
                let mp = fit_mp(&shuffled, cfg.trim)?;
                let path = plot_dir.join(format!("esd_{}_step{}.svg", sanitize(&l.layer_id), b.step));
                emit_esd_plot(&path, &l.layer_id, &spec, &l.pl_fit, Some((&shuffled, &mp)))?;
                written.push(path);
            }
        }
    }
    println!("{:>10} {:>8} {:>8} {:>7} {:>7}  phase", "step", "alpha", "traps", "train", "test");
    for (i, r) in reports.iter().enumerate() {
        let fmt = |x: Option<f64>, d: usize| x.map_or("-".to_owned(), |v| format!("{v:.d$}"));
        println!(
            "{:>10} {:>8} {:>8.2} {:>7} {:>7}  {}",
            r.step,
            fmt(r.mean_alpha(), 3),
            r.mean_traps(),
            fmt(r.train_acc, 4),
            fmt(r.test_acc, 4),
            labels.as_ref().map_or("-", |l| l[i].as_str())
        );
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
