use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use spectrascope_core::interp::{
    embedding_matrix, extract_key_bank, modadd_logit_table, rule_kernel, token_dft_energy,
    unembedding_matrix, DftProfile, KeyBank, RuleKernel,
};
use spectrascope_core::lab::{load_run, ModAddTransformer, SnapshotRecord, RUN_FILE};
use spectrascope_core::report::{line_plot, Series};
use spectrascope_core::{load_manifest, CheckpointBundle, Error};

use crate::{Failure, Globals};

#[derive(Args, Debug)]
pub struct DftArgs {
    /// A modadd run directory or a single checkpoint directory.
    path: PathBuf,
    /// Snapshot of a run to probe: `last`, `best` (highest test accuracy) or a step.
    #[arg(long, default_value = "best")]
    at: String,
    /// Attention heads in the checkpointed model.
    #[arg(long, default_value_t = 4)]
    heads: usize,
}

#[derive(Serialize)]
struct Profiles<'a> {
    step: u64,
    embed: &'a DftProfile,
    unembed: &'a DftProfile,
    k0: &'a DftProfile,
    k1: &'a DftProfile,
    kernel: &'a RuleKernel,
    key_bank: Vec<HeadSummary>,
}

#[derive(Serialize)]
struct HeadSummary {
    head: usize,
    gram_lambda_max0: f64,
    gram_lambda_max1: f64,
    top_s0: Vec<usize>,
    top_s1: Vec<usize>,
}

fn pick(a: &DftArgs) -> Result<CheckpointBundle, Failure> {
    if !a.path.join(RUN_FILE).is_file() {
        if !a.path.exists() {
            return Err(Error::MissingFile(a.path.clone()).into());
        }
        return Ok(load_manifest(&a.path)?);
    }
    let info = load_run(&a.path)?;
    let recs: Vec<_> = info.records.iter().filter(|r| r.dir.is_some()).collect();
    let rec = match a.at.as_str() {
        "last" => recs.last().copied(),
        // Earliest snapshot at the highest test accuracy.
        "best" => recs
            .iter()
            .copied()
            .fold(None, |best: Option<&SnapshotRecord>, r| match best {
                Some(b) if b.test_acc >= r.test_acc => Some(b),
                _ => Some(r),
            }),
        s => {
            let step: u64 = s
                .parse()
                .map_err(|_| Error::BadParams(format!("--at expects last, best or a step, got `{s}`")))?;
            recs.iter().copied().find(|r| r.step == step)
        }
    }
    .ok_or_else(|| Error::BadParams(format!("no snapshot matches `{}`", a.at)))?;
    Ok(load_manifest(&a.path.join(rec.dir.as_ref().expect("filtered")))?)
}

fn write_profile_csv(path: &PathBuf, header: &str, values: &[f64]) -> Result<(), Failure> {
    let mut s = format!("{header}\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    fs::write(path, s).map_err(|e| anyhow::Error::from(e).context(path.display().to_string()).into())
}

fn print_row(name: &str, p: &DftProfile) {
    let vals: Vec<String> = p.top_idx.iter().map(|&i| format!("{:.4}", p.energies[i])).collect();
    println!(
        "{name:<8} top idx {:?}  vals [{}]  non-DC {:.4}",
        p.top_idx,
        vals.join(", "),
        p.non_dc_mass
    );
}

pub fn run(g: &Globals, a: DftArgs) -> Result<(), Failure> {
    let bundle = pick(&a)?;
    let model = ModAddTransformer::from_bundle(&bundle, a.heads)?;
    let (p, d) = (model.p, model.d_model);
    let embed = token_dft_energy(&embedding_matrix(&model), p, d)?;
    let unembed = token_dft_energy(&unembedding_matrix(&model), p, d)?;
    let bank: KeyBank = extract_key_bank(&model);
    let (k0, k1) = bank.concat_keys();
    let k0 = token_dft_energy(&k0, p, d)?;
    let k1 = token_dft_energy(&k1, p, d)?;
    let kernel = rule_kernel(&modadd_logit_table(&model)?, p)?;

    println!("step {}", bundle.step);
    print_row("Embed", &embed);
    print_row("Unembed", &unembed);
    print_row("K0", &k0);
    print_row("K1", &k1);
    println!("kernel   top deltas {:?}  DFT top idx {:?}", kernel.top_deltas, kernel.dft_top);
    let same = |x: &[usize], y: &[usize]| {
        let (mut x, mut y) = (x.to_vec(), y.to_vec());
        x.sort_unstable();
        y.sort_unstable();
        x == y
    };
    println!(
        "kernel = embed freqs: {}   kernel = unembed freqs: {}",
        same(&kernel.dft_top, &embed.top_idx),
        same(&kernel.dft_top, &unembed.top_idx)
    );
    let mut heads = Vec::new();
    for (h, hk) in bank.heads.iter().enumerate() {
        println!(
            "head {h}: lambda_max(G0) {:.6}  lambda_max(G1) {:.6}  top|s0| {:?}  top|s1| {:?}",
            hk.gram_lambda_max0, hk.gram_lambda_max1, hk.top_s0, hk.top_s1
        );
        heads.push(HeadSummary {
            head: h,
            gram_lambda_max0: hk.gram_lambda_max0,
            gram_lambda_max1: hk.gram_lambda_max1,
            top_s0: hk.top_s0.clone(),
            top_s1: hk.top_s1.clone(),
        });
    }

    fs::create_dir_all(&g.out).map_err(anyhow::Error::from)?;
    let json = serde_json::to_string_pretty(&Profiles {
        step: bundle.step,
        embed: &embed,
        unembed: &unembed,
        k0: &k0,
        k1: &k1,
        kernel: &kernel,
        key_bank: heads,
    })
    .map_err(anyhow::Error::from)?;
    let path = g.out.join("dft.json");
    fs::write(&path, json + "\n").map_err(anyhow::Error::from)?;
    for (name, prof) in [("embed", &embed), ("unembed", &unembed), ("k0", &k0), ("k1", &k1)] {
        write_profile_csv(&g.out.join(format!("dft_{name}.csv")), "frequency,energy", &prof.energies)?;
    }
    write_profile_csv(&g.out.join("rule_kernel.csv"), "delta,k", &kernel.k)?;

    let mut plot = line_plot("Token DFT energy", "frequency", "normalized energy");
    for (name, prof) in [("Embed", &embed), ("Unembed", &unembed), ("K0", &k0), ("K1", &k1)] {
        plot.series.push(Series::line(
            name,
            prof.energies.iter().enumerate().map(|(f, &e)| (f as f64, e)).collect(),
        ));
    }
    let total: f64 = kernel.dft_power.iter().sum();
    if total > 0.0 {
        plot.series.push(Series::line(
            "kernel",
            kernel.dft_power.iter().enumerate().map(|(f, &e)| (f as f64, e / total)).collect(),
        ));
    }
    plot.write(&g.out.join("dft.svg"))?;
    eprintln!("wrote {}", g.out.display());
    Ok(())
}
