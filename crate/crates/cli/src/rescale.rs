use std::path::PathBuf;

use clap::Args;
use spectrascope_core::{load_manifest, rescale_bundle, save_manifest};

use crate::{Failure, Globals};

#[derive(Args, Debug)]
pub struct RescaleArgs {
    /// Checkpoint directory or its manifest.json.
    manifest: PathBuf,
    /// Positive factor applied to every entry of every layer.
    #[arg(long)]
    factor: f64,
}

pub fn run(g: &Globals, a: RescaleArgs) -> Result<(), Failure> {
    let bundle = load_manifest(&a.manifest)?;
    let scaled = rescale_bundle(&bundle, a.factor)?;
    save_manifest(&scaled, &g.out)?;
    println!("{}", g.out.display());
    Ok(())
}
