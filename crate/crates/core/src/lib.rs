//! Weight-spectrum diagnostics for neural-network checkpoints.
//!
//! The pipeline for one layer is: empirical spectral density ([`spectral`]),
//! power-law tail fit ([`powerlaw`]), and correlation-trap detection against a
//! Marchenko–Pastur null ([`rmt`], [`traps`]). [`lab`] trains the small MLP and
//! modular-addition transformer used to exercise it; [`report`] ties everything
//! together across a run.

pub mod error;
pub mod interp;
pub mod lab;
pub mod metrics;
pub mod powerlaw;
pub mod report;
pub mod rmt;
pub mod rng;
pub mod spectral;
pub mod store;
pub mod traps;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use store::{
    load_idx, load_manifest, load_mnist, rescale_bundle, save_manifest, stratified_subset,
    CheckpointBundle, LabeledDataset, LayerTag, MnistSplit, WeightMatrix,
};
