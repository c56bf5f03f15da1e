use std::fs;
use std::path::{Path, PathBuf};

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    fn file_names(self) -> (&'static str, &'static str) {
        match self {
            MnistSplit::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            MnistSplit::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile {
                path: self.path.to_path_buf(),
                needed: end,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`
/// and each image is flattened row-major.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let image_bytes = read(images)?;
    let mut r = Reader {
        path: images,
        bytes: &image_bytes,
        pos: 0,
    };
    let magic = r.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = r.u32_be()? as usize;
    let height = r.u32_be()? as usize;
    let width = r.u32_be()? as usize;
    let pixels = r.take(n * height * width)?;
    let inputs: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();

    let label_bytes = read(labels)?;
    let mut r = Reader {
        path: labels,
        bytes: &label_bytes,
        pos: 0,
    };
    let magic = r.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n_labels = r.u32_be()? as usize;
    if n_labels != n {
        return Err(Error::ShapeMismatch {
            what: "label count".into(),
            expected: n,
            found: n_labels,
        });
    }
    let labels: Vec<usize> = r.take(n)?.iter().map(|&l| usize::from(l)).collect();
    let n_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::new(inputs, vec![height, width], labels, n_classes)
}

/// Loads a split from a directory holding the four standard MNIST files.
pub fn load_mnist(dir: &Path, split: MnistSplit) -> Result<LabeledDataset> {
    let (images, labels) = split.file_names();
    let images: PathBuf = dir.join(images);
    let labels: PathBuf = dir.join(labels);
    let mut ds = load_idx(&images, &labels)?;
    ds.n_classes = ds.n_classes.max(10);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, h: u32, w: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, n, h, w] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [LABEL_MAGIC, labels.len() as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn single_blank_image() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&i, idx_images(1, 28, 28, &[0u8; 784])).unwrap();
        fs::write(&l, idx_labels(&[7])).unwrap();
        let ds = load_idx(&i, &l).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.feature_dim(), 784);
        assert!(ds.sample(0).iter().all(|&v| v == 0.0));
        assert_eq!(ds.labels, vec![7]);
    }

    #[test]
    fn pixel_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&i, idx_images(1, 1, 2, &[255, 51])).unwrap();
        fs::write(&l, idx_labels(&[0])).unwrap();
        let ds = load_idx(&i, &l).unwrap();
        assert_eq!(ds.sample(0), &[1.0, 0.2]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        let mut bad = idx_images(1, 1, 1, &[0]);
        bad[..4].copy_from_slice(&0xDEAD_BEEFu32.to_be_bytes());
        fs::write(&i, bad).unwrap();
        fs::write(&l, idx_labels(&[0])).unwrap();
        assert!(matches!(
            load_idx(&i, &l),
            Err(Error::BadMagic { found: 0xDEAD_BEEF, .. })
        ));
        fs::write(&i, idx_images(2, 2, 2, &[0u8; 5])).unwrap();
        assert!(matches!(load_idx(&i, &l), Err(Error::TruncatedFile { .. })));
    }
}
