//! Dataset ingestion and set construction: IDX images to pixel sets,
//! synthetic set tasks, batching with content digests, and augmentation.

pub mod augment;
pub mod idx;
pub mod pixel;
pub mod synthetic;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::Tensor;

pub use augment::{augment, AugmentOp};
pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, LabeledImages};
pub use pixel::{downsample_2x2, image_to_pixel_set, pixel_dataset, PixelSet};
pub use synthetic::{make_synthetic_task, quadrant_majority_label, SyntheticTaskSpec};

/// Labeled sets of uniform size `N` and element width `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct SetDataset {
    pub sets: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub set_size: usize,
    pub width: usize,
    pub class_count: usize,
    /// Free-form provenance notes (normalization, refill policy, ...).
    pub metadata: Vec<(String, String)>,
}

impl SetDataset {
    pub fn new(sets: Vec<Tensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if sets.len() != labels.len() {
            return Err(Error::Consistency(format!("{} sets but {} labels", sets.len(), labels.len())));
        }
        let (set_size, width) = match sets.first() {
            Some(s) => (s.rows(), s.cols()),
            None => (0, 0),
        };
        if let Some(bad) = sets.iter().find(|s| s.shape() != [set_size, width]) {
            return Err(Error::Consistency(format!(
                "set of shape {:?} among sets of shape [{set_size}, {width}]",
                bad.shape()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!("label {l} outside {class_count} classes")));
        }
        Ok(Self {
            sets,
            labels,
            set_size,
            width,
            class_count,
            metadata: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.retain(|(k, _)| k != key);
        self.metadata.push((key.to_string(), value.into()));
    }

    pub fn batch(&self, indices: &[usize]) -> Result<SetBatch> {
        let parts: Vec<Tensor> = indices.iter().map(|&i| self.sets[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        SetBatch::new(&parts, labels)
    }

    pub fn all(&self) -> Result<SetBatch> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (s, l) in self.sets.iter().zip(&self.labels) {
            hash_set(&mut h, s, *l);
        }
        hex::encode(h.finalize())
    }
}

fn hash_set(h: &mut Sha256, set: &Tensor, label: usize) {
    for &e in set.shape() {
        h.update((e as u64).to_le_bytes());
    }
    for v in set.data() {
        h.update(v.to_le_bytes());
    }
    h.update((label as u64).to_le_bytes());
}

/// `B` sets stacked as a `B×N×p` tensor with labels and a content digest.
#[derive(Clone, Debug, PartialEq)]
pub struct SetBatch {
    pub sets: Tensor,
    pub labels: Vec<usize>,
    /// SHA-256 over extents, little-endian values and labels.
    pub digest: String,
}

impl SetBatch {
    pub fn new(sets: &[Tensor], labels: Vec<usize>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Consistency("empty batch".into()));
        }
        if sets.len() != labels.len() {
            return Err(Error::Consistency(format!("{} sets but {} labels", sets.len(), labels.len())));
        }
        let shape = sets[0].shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape {
                shape,
                reason: "sets must be N×p matrices".into(),
            });
        }
        let mut data = Vec::with_capacity(sets.len() * sets[0].numel());
        let mut h = Sha256::new();
        for (s, &l) in sets.iter().zip(&labels) {
            if s.shape() != shape.as_slice() {
                return Err(Error::Consistency(format!(
                    "non-uniform set shapes {:?} and {:?}",
                    shape,
                    s.shape()
                )));
            }
            hash_set(&mut h, s, l);
            data.extend_from_slice(s.data());
        }
        Ok(Self {
            sets: Tensor::new(vec![sets.len(), shape[0], shape[1]], data)?,
            labels,
            digest: hex::encode(h.finalize()),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.sets.shape()[0]
    }

    pub fn set_size(&self) -> usize {
        self.sets.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.sets.shape()[2]
    }

    /// `(B·N)×p` view used by the models.
    pub fn stacked(&self) -> Tensor {
        self.sets
            .reshape(&[self.batch_size() * self.set_size(), self.width()])
            .expect("same element count")
    }

    pub fn set(&self, b: usize) -> Tensor {
        let (n, p) = (self.set_size(), self.width());
        Tensor::new(vec![n, p], self.sets.data()[b * n * p..(b + 1) * n * p].to_vec()).expect("slice")
    }

    pub fn unstack(&self) -> Vec<Tensor> {
        (0..self.batch_size()).map(|b| self.set(b)).collect()
    }
}
