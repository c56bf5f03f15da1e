//! Fixtures shared by the criterion benches.

use spectrascope_core::lab::{build_modadd_dataset, init_mlp, init_transformer, MlpConfig, ModAddConfig, ModAddTransformer, Mlp};
use spectrascope_core::spectral::gaussian_matrix;
use spectrascope_core::{LabeledDataset, WeightMatrix};

/// An i.i.d. unit Gaussian layer.
pub fn gaussian_layer(rows: usize, cols: usize, seed: u64) -> WeightMatrix {
    gaussian_matrix("bench", rows, cols, 1.0, seed).expect("valid shape")
}

/// A synthetic 784-dimensional 10-class dataset with `n` samples, so the MLP
/// bench does not need MNIST on disk.
pub fn synthetic_images(n: usize, seed: u64) -> LabeledDataset {
    let w = gaussian_layer(n, 784, seed);
    let inputs = w.native_entries().iter().map(|x| x.abs().min(1.0)).collect();
    let labels = (0..n).map(|i| i % 10).collect();
    LabeledDataset::new(inputs, vec![784], labels, 10).expect("consistent dataset")
}

pub fn mlp() -> Mlp {
    init_mlp(&MlpConfig::default()).expect("default config is valid")
}

pub fn modadd(p: usize) -> (ModAddTransformer, LabeledDataset) {
    let cfg = ModAddConfig { p, ..ModAddConfig::default() };
    let (train, _) = build_modadd_dataset(p, cfg.train_fraction, 0).expect("valid split");
    (init_transformer(&cfg).expect("valid config"), train)
}
