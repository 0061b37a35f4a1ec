//! Dataset loading, batching and augmentation.

mod augment;
mod cifar;
mod idx;

pub use augment::{augment, flip_horizontal, translate, zoom, AugmentSpec};
pub use cifar::{encode_cifar10_record, load_cifar10_binary, parse_cifar10_bytes, standardize_per_channel, CifarSplit, CIFAR10_RECORD_LEN};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, load_mnist_dir, parse_idx_images, parse_idx_labels, MnistSplit};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Images in `[N, H, W, C]` layout with values in `[0, 1]`, and their labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        images.expect_ndim(4, "dataset")?;
        let n = images.shape()[0];
        if labels.len() != n {
            return Err(Error::Consistency(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Per-sample shape `[H, W, C]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Gathers the samples at `indices` into a batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let len = self.sample_len();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&src[i * len..(i + 1) * len]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts(shape, data), labels)
    }

    /// The first `n` samples (or all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, labels) = self.gather(&idx);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// One pass over the data in batches of `batch_size`; the final batch may
    /// be short. With `shuffle`, the order is a permutation drawn from `rng`.
    pub fn batches(&self, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            order.shuffle(rng);
        }
        Ok(BatchIter {
            dataset: self,
            order,
            batch_size,
            pos: 0,
        })
    }
}

/// Iterator over `(images, labels)` batches for one epoch.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIter<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor<f32>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let images = Tensor::from_fn(vec![n, 2, 2, 1], |i| (i % 7) as f32 / 7.0).unwrap();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new(images, labels, 3, "toy").unwrap()
    }

    #[test]
    fn batch_sizes_with_short_tail() {
        let ds = toy(10);
        let sizes: Vec<usize> = ds
            .batches(4, true, &mut Rng::new(1))
            .unwrap()
            .map(|(x, y)| {
                assert_eq!(x.shape()[0], y.len());
                y.len()
            })
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn same_seed_same_order() {
        let ds = toy(50);
        let a = ds.batches(8, true, &mut Rng::new(3)).unwrap().order().to_vec();
        let b = ds.batches(8, true, &mut Rng::new(3)).unwrap().order().to_vec();
        let c = ds.batches(8, true, &mut Rng::new(4)).unwrap().order().to_vec();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn epoch_visits_label_multiset() {
        let ds = toy(37);
        let mut seen: Vec<usize> = ds
            .batches(5, true, &mut Rng::new(9))
            .unwrap()
            .flat_map(|(_, y)| y)
            .collect();
        let mut expected = ds.labels().to_vec();
        seen.sort_unstable();
        expected.sort_unstable();
        assert_eq!(seen, expected);
    }

    #[test]
    fn unshuffled_is_sequential() {
        let ds = toy(6);
        let order = ds.batches(4, false, &mut Rng::new(0)).unwrap().order().to_vec();
        assert_eq!(order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_labels_and_batch_size() {
        let images = Tensor::zeros(vec![2, 1, 1, 1]).unwrap();
        assert!(matches!(
            Dataset::new(images.clone(), vec![0, 5], 3, "x"),
            Err(Error::Consistency(_))
        ));
        assert!(Dataset::new(images, vec![0], 3, "x").is_err());
        assert!(toy(3).batches(0, false, &mut Rng::new(0)).is_err());
    }
}
