use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{Dataset, LabeledExample};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((n, rows, cols, bytes[16..expected].to_vec()))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Loads an IDX image/label pair, scaling pixels to `[0, 1]`.
pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let dim = rows * cols;
    let classes = 10;
    let mut examples = Vec::with_capacity(n);
    for (img, &y) in pixels.chunks_exact(dim.max(1)).zip(&labels) {
        if y as usize >= classes {
            return Err(Error::LabelOutOfRange {
                label: y as usize,
                classes,
            });
        }
        let features = img.iter().map(|&p| p as f32 / 255.0).collect();
        examples.push(LabeledExample::new(features, y as usize));
    }
    Ok(Dataset {
        classes,
        feature_dim: dim,
        image: Some((rows, cols)),
        examples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

/// Loads the standard uncompressed file names from a directory.
pub fn load_mnist_dir(dir: &Path, split: MnistSplit) -> Result<Dataset> {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let images: PathBuf = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels: PathBuf = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    for p in [&images, &labels] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.display().to_string()));
        }
    }
    load_mnist(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, fill: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(fill);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_two_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; 2 * 784];
        pixels[0] = 255;
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, idx_images(2, 28, 28, &pixels)).unwrap();
        fs::write(&lp, idx_labels(&[7, 3])).unwrap();
        let ds = load_mnist(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim, 784);
        assert_eq!(ds.examples[0].features[0], 1.0);
        assert_eq!(ds.examples[0].features[1], 0.0);
        assert_eq!(ds.examples[1].true_label, 3);
    }

    #[test]
    fn distinct_errors_for_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&lp, idx_labels(&[1, 2])).unwrap();

        fs::write(&ip, idx_labels(&[1, 2])).unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::BadMagic { .. })));

        fs::write(&ip, idx_images(2, 28, 28, &[0u8; 100])).unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::Truncated { .. })));

        fs::write(&ip, idx_images(3, 2, 2, &[0u8; 12])).unwrap();
        assert!(matches!(
            load_mnist(&ip, &lp),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));
    }
}
