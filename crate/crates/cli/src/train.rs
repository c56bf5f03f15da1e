use std::path::PathBuf;

use clap::{Args, Subcommand};
use spectrascope_core::lab::{run_mlp, run_modadd, AdamWConfig, MlpConfig, ModAddConfig, SnapshotRecord};

use crate::{Failure, Globals};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(subcommand)]
    model: TrainModel,
}

#[derive(Subcommand, Debug)]
enum TrainModel {
    /// 784-200-200-10 ReLU MLP on a stratified MNIST subset, MSE loss.
    Mlp(MlpArgs),
    /// One-layer transformer on (x + y) mod p.
    Modadd(ModAddArgs),
}

#[derive(Args, Debug)]
struct MlpArgs {
    /// Optimizer steps.
    #[arg(long, default_value_t = 200_000)]
    steps: u64,
    /// AdamW learning rate.
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Decoupled weight decay (0.01 for the weight-decay comparison run).
    #[arg(long, default_value_t = 0.0)]
    wd: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 200)]
    batch: usize,
    /// Multiplier applied to every parameter after default initialization.
    #[arg(long, default_value_t = 8.0)]
    init_scale: f64,
    /// Training samples per digit class.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, env = "MNIST_DIR", default_value = "data/mnist")]
    mnist: PathBuf,
    /// Snapshots per decade of steps (log-spaced).
    #[arg(long, default_value_t = 10)]
    snapshots_per_decade: u32,
}

#[derive(Args, Debug)]
struct ModAddArgs {
    /// Modulus; tokens 0..p-1 are numbers and p is `=`.
    #[arg(long, default_value_t = 113)]
    p: usize,
    /// Fraction of all p² pairs used for training.
    #[arg(long, default_value_t = 0.3)]
    frac: f64,
    /// Optimizer steps.
    #[arg(long, default_value_t = 30_000)]
    steps: u64,
    /// Peak AdamW learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Decoupled weight decay.
    #[arg(long, default_value_t = 1.0)]
    wd: f64,
    /// AdamW beta1.
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    /// AdamW beta2.
    #[arg(long, default_value_t = 0.98)]
    beta2: f64,
    /// Linear learning-rate warmup steps.
    #[arg(long, default_value_t = 10)]
    warmup: u64,
    /// Minibatch size (default: full batch).
    #[arg(long)]
    batch: Option<usize>,
    /// Snapshots per decade of steps (log-spaced).
    #[arg(long, default_value_t = 10)]
    snapshots_per_decade: u32,
}

fn report(r: &SnapshotRecord) {
    eprintln!(
        "step {:>9}  loss {:.6e}  train {:.4}  test {:.4}",
        r.step, r.train_loss, r.train_acc, r.test_acc
    );
}

pub fn run(g: &Globals, args: TrainArgs) -> Result<(), Failure> {
    let traj = match args.model {
        TrainModel::Mlp(a) => {
            let cfg = MlpConfig {
                init_scale: a.init_scale,
                batch: a.batch,
                optimizer: AdamWConfig {
                    lr: a.lr,
                    weight_decay: a.wd,
                    ..MlpConfig::default().optimizer
                },
                steps: a.steps,
                seed: g.seed,
                train_per_class: a.per_class,
                snapshots_per_decade: a.snapshots_per_decade,
                ..MlpConfig::default()
            };
            run_mlp(&cfg, &a.mnist, &g.out, &mut report)?
        }
        TrainModel::Modadd(a) => {
            let cfg = ModAddConfig {
                p: a.p,
                train_fraction: a.frac,
                batch: a.batch,
                optimizer: AdamWConfig {
                    lr: a.lr,
                    weight_decay: a.wd,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: 1e-8,
                    warmup_steps: a.warmup,
                },
                steps: a.steps,
                seed: g.seed,
                data_seed: g.seed,
                snapshots_per_decade: a.snapshots_per_decade,
                ..ModAddConfig::default()
            };
            run_modadd(&cfg, &g.out, &mut report)?
        }
    };
    if let Some(last) = traj.records.last() {
        println!(
            "{}: {} snapshots, final step {} train {:.4} test {:.4}",
            g.out.display(),
            traj.records.len(),
            last.step,
            last.train_acc,
            last.test_acc
        );
    }
    Ok(())
}
