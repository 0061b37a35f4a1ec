use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One label byte followed by 1024 red, 1024 green and 1024 blue bytes.
pub const CIFAR10_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const RECORDS_PER_FILE: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

impl CifarSplit {
    fn files(self) -> Vec<String> {
        match self {
            CifarSplit::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            CifarSplit::Test => vec!["test_batch.bin".to_string()],
        }
    }
}

/// Decodes concatenated CIFAR-10 records into `[N, 32, 32, 3]` images in `[0, 1]`.
pub fn parse_cifar10_bytes(bytes: &[u8]) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % CIFAR10_RECORD_LEN != 0 {
        return Err(Error::format(format!(
            "cifar10: {} bytes is not a whole number of {CIFAR10_RECORD_LEN}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR10_RECORD_LEN;
    let mut pixels = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR10_RECORD_LEN) {
        let label = record[0] as usize;
        if label >= 10 {
            return Err(Error::format(format!("cifar10: label byte {label} out of range")));
        }
        labels.push(label);
        let planes = &record[1..];
        for p in 0..1024 {
            for ch in 0..3 {
                pixels.push(planes[ch * 1024 + p] as f32 / 255.0);
            }
        }
    }
    Ok((pixels, labels))
}

/// Encodes one image (`[32, 32, 3]` bytes, HWC) as a channel-planar record.
pub fn encode_cifar10_record(label: u8, hwc: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; CIFAR10_RECORD_LEN];
    out[0] = label;
    for p in 0..1024 {
        for ch in 0..3 {
            out[1 + ch * 1024 + p] = hwc[p * 3 + ch];
        }
    }
    out
}

/// Loads the standard CIFAR-10 binary batch files from `dir`. Each file must
/// hold exactly 10000 records.
pub fn load_cifar10_binary(dir: impl AsRef<Path>, split: CifarSplit) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in split.files() {
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(|e| Error::path(&path, e))?;
        let expected = RECORDS_PER_FILE * CIFAR10_RECORD_LEN;
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "{name}: expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let (p, l) = parse_cifar10_bytes(&bytes)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let images = Tensor::new(vec![labels.len(), 32, 32, 3], pixels)?;
    Dataset::new(images, labels, 10, format!("cifar10-{split:?}").to_lowercase())
}

/// Shifts and scales each channel to zero mean and unit variance using the
/// statistics of `reference` (normally the training split). Returns the
/// per-channel `(mean, std)` pairs used.
pub fn standardize_per_channel(images: &mut Tensor<f32>, reference: &Tensor<f32>) -> Result<Vec<(f32, f32)>> {
    images.expect_ndim(4, "standardize")?;
    reference.expect_ndim(4, "standardize")?;
    let c = reference.shape()[3];
    if images.shape()[3] != c {
        return Err(Error::dim(format!(
            "standardize: {} channels vs reference {c}",
            images.shape()[3]
        )));
    }
    let mut stats = Vec::with_capacity(c);
    for ch in 0..c {
        let values = reference.data().iter().skip(ch).step_by(c);
        let count = (reference.len() / c) as f64;
        let mean = values.clone().map(|&v| v as f64).sum::<f64>() / count;
        let var = values.map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / count;
        stats.push((mean as f32, var.sqrt().max(1e-8) as f32));
    }
    for (i, v) in images.data_mut().iter_mut().enumerate() {
        let (mean, std) = stats[i % c];
        *v = (*v - mean) / std;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_image(seed: u8) -> Vec<u8> {
        (0..3072).map(|i| (i as u8).wrapping_mul(seed).wrapping_add(seed)).collect()
    }

    #[test]
    fn record_round_trip() {
        let hwc = synthetic_image(7);
        let record = encode_cifar10_record(4, &hwc);
        assert_eq!(record.len(), 3073);
        let (pixels, labels) = parse_cifar10_bytes(&record).unwrap();
        assert_eq!(labels, vec![4]);
        let back: Vec<u8> = pixels.iter().map(|&p| (p * 255.0).round() as u8).collect();
        assert_eq!(back, hwc);
    }

    #[test]
    fn channel_planar_layout() {
        let mut record = vec![0u8; 3073];
        record[1] = 255; // red, pixel 0
        record[1 + 1024 + 1] = 255; // green, pixel 1
        let (pixels, _) = parse_cifar10_bytes(&record).unwrap();
        assert_eq!(&pixels[..6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn wrong_size_and_label() {
        assert!(matches!(parse_cifar10_bytes(&[0u8; 3072]), Err(Error::Format(_))));
        let mut record = vec![0u8; 3073];
        record[0] = 10;
        assert!(matches!(parse_cifar10_bytes(&record), Err(Error::Format(_))));
    }

    #[test]
    fn loader_checks_file_size() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("test_batch.bin"), encode_cifar10_record(1, &synthetic_image(3))).unwrap();
        let err = load_cifar10_binary(dir.path(), CifarSplit::Test).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn standardization_zero_mean_unit_var() {
        let mut rng = crate::Rng::new(5);
        let reference = Tensor::uniform(vec![4, 3, 3, 3], 0.0, 1.0, &mut rng).unwrap();
        let mut x = reference.clone();
        standardize_per_channel(&mut x, &reference).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = x.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
