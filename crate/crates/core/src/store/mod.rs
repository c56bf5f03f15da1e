//! Weight matrices, checkpoint bundles and datasets, plus their on-disk formats.
//!
//! A checkpoint on disk is a directory holding `manifest.json` and one raw
//! little-endian `f64` blob per layer (row-major, native orientation). In
//! memory every [`WeightMatrix`] is kept in canonical orientation, `rows >= cols`,
//! so that the aspect ratio `Q = N/M` is never below one.

mod dataset;
mod idx;
mod manifest;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{stratified_subset, LabeledDataset};
pub use idx::{load_idx, load_mnist, MnistSplit};
pub use manifest::{load_manifest, save_manifest, ManifestEntry, ManifestFile, MANIFEST_NAME};

/// What role a parameter tensor plays in its network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerTag {
    Dense,
    Embedding,
    Attention,
    Unembedding,
    /// Bias vectors, persisted for restarts but never analysed spectrally.
    Bias,
}

impl LayerTag {
    pub fn is_weight(self) -> bool {
        !matches!(self, LayerTag::Bias)
    }
}

/// One layer's 2-D parameter array in canonical orientation (`rows >= cols`).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    layer_id: String,
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    tag: LayerTag,
    flipped: bool,
}

impl WeightMatrix {
    /// Builds a matrix from row-major entries in the layer's native layout.
    /// Wide matrices are transposed so that `rows >= cols`.
    pub fn new(
        layer_id: impl Into<String>,
        rows: usize,
        cols: usize,
        entries: Vec<f64>,
        tag: LayerTag,
    ) -> Result<Self> {
        let layer_id = layer_id.into();
        if rows == 0 || cols == 0 {
            return Err(Error::BadParams(format!(
                "layer `{layer_id}` has an empty dimension ({rows}x{cols})"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: layer_id,
                expected: rows * cols,
                found: entries.len(),
            });
        }
        if let Some(index) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { layer_id, index });
        }
        if rows >= cols {
            Ok(Self {
                layer_id,
                rows,
                cols,
                entries,
                tag,
                flipped: false,
            })
        } else {
            Ok(Self {
                layer_id,
                rows: cols,
                cols: rows,
                entries: transpose(&entries, rows, cols),
                tag,
                flipped: true,
            })
        }
    }

    /// Builds from already-canonical entries, keeping the caller's flag.
    pub fn from_canonical(
        layer_id: impl Into<String>,
        rows: usize,
        cols: usize,
        entries: Vec<f64>,
        tag: LayerTag,
        flipped: bool,
    ) -> Result<Self> {
        let layer_id = layer_id.into();
        if rows < cols {
            return Err(Error::BadParams(format!(
                "canonical layer `{layer_id}` must have rows >= cols ({rows}x{cols})"
            )));
        }
        let mut w = Self::new(layer_id, rows, cols, entries, tag)?;
        w.flipped = flipped;
        Ok(w)
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    /// `N`, the larger dimension.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `M`, the smaller dimension.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.rows as f64 / self.cols as f64
    }

    pub fn tag(&self) -> LayerTag {
        self.tag
    }

    pub fn orientation_flipped(&self) -> bool {
        self.flipped
    }

    /// Canonical row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    /// Shape in the layer's native orientation.
    pub fn native_shape(&self) -> (usize, usize) {
        if self.flipped {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    /// Row-major entries in the layer's native orientation.
    pub fn native_entries(&self) -> Vec<f64> {
        if self.flipped {
            transpose(&self.entries, self.rows, self.cols)
        } else {
            self.entries.clone()
        }
    }

    /// Same layer with entries replaced (canonical layout); re-validates finiteness.
    pub fn with_entries(&self, entries: Vec<f64>) -> Result<Self> {
        Self::from_canonical(
            self.layer_id.clone(),
            self.rows,
            self.cols,
            entries,
            self.tag,
            self.flipped,
        )
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    /// Canonical matrix as an `nalgebra` matrix.
    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }

    /// Native-orientation matrix as an `nalgebra` matrix.
    pub fn native_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        let (r, c) = self.native_shape();
        nalgebra::DMatrix::from_row_slice(r, c, &self.native_entries())
    }
}

pub(crate) fn transpose(entries: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; entries.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = entries[r * cols + c];
        }
    }
    out
}

/// Ordered set of layers at one optimizer step, with optional accuracies.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointBundle {
    pub step: u64,
    pub layers: Vec<WeightMatrix>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub meta: BTreeMap<String, String>,
}

impl CheckpointBundle {
    pub fn new(step: u64, layers: Vec<WeightMatrix>) -> Result<Self> {
        let bundle = Self {
            step,
            layers,
            ..Self::default()
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Checks layer-id uniqueness and accuracy ranges.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.layer_id()) {
                return Err(Error::InvalidLayerId(format!(
                    "{} (duplicate)",
                    layer.layer_id()
                )));
            }
        }
        for acc in [self.train_acc, self.test_acc].into_iter().flatten() {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::BadParams(format!("accuracy {acc} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn layer(&self, layer_id: &str) -> Option<&WeightMatrix> {
        self.layers.iter().find(|l| l.layer_id() == layer_id)
    }

    pub fn layer_mut(&mut self, layer_id: &str) -> Option<&mut WeightMatrix> {
        self.layers.iter_mut().find(|l| l.layer_id() == layer_id)
    }

    pub fn weight_layers(&self) -> impl Iterator<Item = &WeightMatrix> {
        self.layers.iter().filter(|l| l.tag().is_weight())
    }
}

/// Multiplies every entry of every layer by `factor` and records it in `meta`.
pub fn rescale_bundle(bundle: &CheckpointBundle, factor: f64) -> Result<CheckpointBundle> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::NonPositiveFactor(factor));
    }
    let layers = bundle
        .layers
        .iter()
        .map(|l| l.with_entries(l.entries().iter().map(|v| v * factor).collect()))
        .collect::<Result<Vec<_>>>()?;
    let mut meta = bundle.meta.clone();
    let cumulative = meta
        .get("rescale_factor")
        .and_then(|s| s.parse::<f64>().ok())
        .map_or(factor, |prev| prev * factor);
    meta.insert("rescale_factor".to_owned(), cumulative.to_string());
    Ok(CheckpointBundle {
        step: bundle.step,
        layers,
        train_acc: bundle.train_acc,
        test_acc: bundle.test_acc,
        meta,
    })
}
