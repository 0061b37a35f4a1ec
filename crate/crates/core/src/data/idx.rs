use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

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

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::path(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("{what}: file truncated in header ({} bytes)", bytes.len())))
}

/// Parses an IDX image file (magic `0x00000803`, dims N, H, W) into
/// `[N, H, W, 1]` pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f32>> {
    let magic = be_u32(bytes, 0, "idx images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(format!(
            "idx images: expected magic {IMAGES_MAGIC:#010x}, found {magic:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "idx images")? as usize;
    let h = be_u32(bytes, 8, "idx images")? as usize;
    let w = be_u32(bytes, 12, "idx images")? as usize;
    let expected = n * h * w;
    let body = &bytes[16..];
    if body.len() != expected {
        return Err(Error::format(format!(
            "idx images: header declares {n}x{h}x{w} = {expected} pixel bytes, file has {}",
            body.len()
        )));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::format("idx images: empty dimension in header"));
    }
    let data = body.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![n, h, w, 1], data)
}

/// Parses an IDX label file (magic `0x00000801`, dim N).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "idx labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(format!(
            "idx labels: expected magic {LABELS_MAGIC:#010x}, found {magic:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "idx labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(format!(
            "idx labels: header declares {n} labels, file has {}",
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair as a 10-class dataset.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.shape()[0],
            labels.len()
        )));
    }
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(images, labels, 10, name)
}

/// Loads a split from a directory holding the four standard MNIST file names.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: MnistSplit) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (images, labels) = split.file_names();
    let images: PathBuf = dir.join(images);
    load_idx(images, dir.join(labels))
}

/// Serializes `[N, H, W]` bytes as an IDX image file.
pub fn encode_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_scales() {
        let bytes = encode_idx_images(2, 1, 2, &[0, 255, 51, 102]);
        let t = parse_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 1]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(parse_idx_labels(&encode_idx_labels(&[3, 7])).unwrap(), vec![3, 7]);
    }

    #[test]
    fn wrong_magic_reports_observed_value() {
        let bytes = encode_idx_labels(&[1]);
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("0x00000801"), "{err}");
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = encode_idx_images(2, 2, 2, &[0; 8]);
        assert!(matches!(parse_idx_images(&bytes[..12]), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&bytes[..20]), Err(Error::Format(_))));
        let labels = encode_idx_labels(&[1, 2, 3]);
        assert!(matches!(parse_idx_labels(&labels[..9]), Err(Error::Format(_))));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, encode_idx_images(2, 1, 1, &[1, 2])).unwrap();
        fs::write(&lab, encode_idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Consistency(_))));
    }

    #[test]
    fn missing_file_is_path_error() {
        let err = load_idx("/nonexistent/a", "/nonexistent/b").unwrap_err();
        assert!(matches!(err, Error::Path { .. }));
        assert!(err.is_data_error());
    }
}
