use std::path::PathBuf;

use clap::Args;
use spectrascope_core::powerlaw::{classify_regime, fit_powerlaw, PLOptions, RegimeBands};
use spectrascope_core::rmt::{fit_mp, TrimPolicy};
use spectrascope_core::spectral::{esd, shuffle_elements};
use spectrascope_core::{load_manifest, Error};

use crate::analyze::sanitize;
use crate::{Failure, Globals};

#[derive(Args, Debug)]
pub struct EsdArgs {
    /// Checkpoint directory or its manifest.json.
    manifest: PathBuf,
    /// Layer to plot.
    #[arg(long)]
    layer: String,
}

pub fn run(g: &Globals, a: EsdArgs) -> Result<(), Failure> {
    let bundle = load_manifest(&a.manifest)?;
    let w = bundle
        .layer(&a.layer)
        .ok_or_else(|| Error::InvalidLayerId(format!("{} (not in checkpoint)", a.layer)))?;
    let spec = esd(w)?;
    let fit = fit_powerlaw(&spec, &PLOptions::default())?;
    let shuffled = esd(&shuffle_elements(w, g.seed))?;
    let mp = fit_mp(&shuffled, TrimPolicy::default())?;
    std::fs::create_dir_all(&g.out).map_err(anyhow::Error::from)?;
    let path = g.out.join(format!("esd_{}.svg", sanitize(&a.layer)));
    spectrascope_core::report::emit_esd_plot(&path, &a.layer, &spec, &fit, Some((&shuffled, &mp)))?;
    println!(
        "{}: alpha {:.4} xmin {:.6} n_tail {} regime {}  shuffled MP sigma {:.4} lambda+ {:.6}",
        a.layer,
        fit.alpha,
        fit.lambda_min_fit,
        fit.n_tail,
        classify_regime(fit.alpha, &RegimeBands::default()).as_str(),
        mp.sigma_mp,
        mp.lambda_plus
    );
    eprintln!("wrote {}", path.display());
    Ok(())
}
