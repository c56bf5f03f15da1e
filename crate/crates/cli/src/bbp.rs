use std::fs;

use clap::Args;
use spectrascope_core::rmt::{TrimPolicy, TW_MARGIN};
use spectrascope_core::traps::{bbp_sweep, BbpParams, TrapConfig};

use crate::{Failure, Globals};

#[derive(Args, Debug)]
pub struct BbpArgs {
    /// Aspect ratio M/N of the simulated layer.
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    /// Entry standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Rows of the simulated layer.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Spike strengths as multiples of the critical θ_c.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2")]
    grid: Vec<f64>,
    /// Independent draws per grid point.
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    #[arg(long, default_value_t = TW_MARGIN)]
    tw_margin: f64,
}

pub fn run(g: &Globals, a: BbpArgs) -> Result<(), Failure> {
    let params = BbpParams::new(a.gamma, a.sigma)?;
    let cfg = TrapConfig {
        seed: g.seed,
        n_shuffles: 1,
        trim: TrimPolicy::default(),
        tw_margin: a.tw_margin,
    };
    let rows = bbp_sweep(&params, a.n, &a.grid, a.seeds, &cfg)?;
    let mut csv = String::from("theta_ratio,theta,mean_lambda_max,trap_rate\n");
    println!("theta_c = {:.6}", params.theta_c);
    println!("{:>8} {:>10} {:>14} {:>9}", "ratio", "theta", "mean lmax", "trap rate");
    for r in &rows {
        println!(
            "{:>8.3} {:>10.4} {:>14.6} {:>9.3}",
            r.theta_ratio, r.theta, r.mean_lambda_max, r.trap_rate
        );
        csv.push_str(&format!("{},{},{},{}\n", r.theta_ratio, r.theta, r.mean_lambda_max, r.trap_rate));
    }
    fs::create_dir_all(&g.out).map_err(anyhow::Error::from)?;
    let path = g.out.join("bbp.csv");
    fs::write(&path, csv).map_err(anyhow::Error::from)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
