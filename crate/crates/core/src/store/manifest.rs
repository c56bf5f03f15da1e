use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CheckpointBundle, LayerTag, WeightMatrix};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";
const SCHEMA_VERSION: u32 = 1;

/// `manifest.json` as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub version: u32,
    pub step: u64,
    pub layers: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_acc: Option<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// One layer record. `rows`/`cols` describe the blob (native layout);
/// `flipped` says the in-memory matrix is its transpose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub flipped: Option<bool>,
    pub file: String,
    pub tag: LayerTag,
}

fn blob_name(id: &str) -> Result<String> {
    if id.is_empty() {
        return Err(Error::InvalidLayerId(id.to_owned()));
    }
    let stem: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if stem.starts_with('.') {
        return Err(Error::InvalidLayerId(id.to_owned()));
    }
    Ok(format!("{stem}.f64le"))
}

/// Writes `manifest.json` plus one `<id>.f64le` blob per layer into `dir`.
pub fn save_manifest(bundle: &CheckpointBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut files = HashSet::new();
    let mut entries = Vec::with_capacity(bundle.layers.len());
    for layer in &bundle.layers {
        let file = blob_name(layer.layer_id())?;
        if !files.insert(file.clone()) {
            return Err(Error::InvalidLayerId(format!(
                "{} (blob name collision)",
                layer.layer_id()
            )));
        }
        let (rows, cols) = layer.native_shape();
        let native = layer.native_entries();
        let mut bytes = Vec::with_capacity(native.len() * 8);
        for v in &native {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: layer.layer_id().to_owned(),
            rows,
            cols,
            flipped: Some(layer.orientation_flipped()),
            file,
            tag: layer.tag(),
        });
    }

    let manifest = ManifestFile {
        version: SCHEMA_VERSION,
        step: bundle.step,
        layers: entries,
        train_acc: bundle.train_acc,
        test_acc: bundle.test_acc,
        meta: bundle.meta.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a checkpoint directory (or a path to its `manifest.json`).
pub fn load_manifest(path: &Path) -> Result<CheckpointBundle> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_NAME))
    } else {
        let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        (dir, path.to_path_buf())
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ManifestFile =
        serde_json::from_str(&text).map_err(|e| Error::BadManifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
    if manifest.version != SCHEMA_VERSION {
        return Err(Error::BadManifest {
            path: manifest_path,
            reason: format!("unsupported schema version {}", manifest.version),
        });
    }

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        if entry.file.contains('/') || entry.file.contains('\\') || entry.file.starts_with('.') {
            return Err(Error::BadManifest {
                path: manifest_path,
                reason: format!("blob path `{}` escapes the checkpoint directory", entry.file),
            });
        }
        if let Some(flipped) = entry.flipped {
            if flipped != (entry.rows < entry.cols) {
                return Err(Error::BadManifest {
                    path: manifest_path,
                    reason: format!(
                        "layer `{}`: flipped={} inconsistent with {}x{}",
                        entry.id, flipped, entry.rows, entry.cols
                    ),
                });
            }
        }
        let blob_path = dir.join(&entry.file);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let expected = entry.rows * entry.cols * 8;
        if bytes.len() != expected {
            return Err(Error::ShapeMismatch {
                what: entry.id.clone(),
                expected,
                found: bytes.len(),
            });
        }
        let entries = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        layers.push(WeightMatrix::new(
            entry.id.clone(),
            entry.rows,
            entry.cols,
            entries,
            entry.tag,
        )?);
    }

    let bundle = CheckpointBundle {
        step: manifest.step,
        layers,
        train_acc: manifest.train_acc,
        test_acc: manifest.test_acc,
        meta: manifest.meta,
    };
    bundle.validate()?;
    Ok(bundle)
}
