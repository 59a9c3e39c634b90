//! Datasets: MNIST IDX ingestion, synthetic identities with a controllable
//! domain shift, client partitioning and open-set verification pairs.

mod mnist;
mod partition;
mod synthetic;

pub use mnist::{encode_idx_images, encode_idx_labels, load_mnist_idx, parse_mnist_idx, write_mnist_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{partition_clients, partition_indices, split_train_test_identities, PartitionKind, PartitionScheme};
pub use synthetic::{gen_synthetic_identities, SyntheticConfig, SyntheticManifest};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// Data the server pretrains on.
    PublicDomain,
    /// Data that only exists on devices.
    PrivateDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Reference capture.
    Standard,
    /// Capture with noise and possible occlusion.
    Wild,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`, pixels in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub domain: Domain,
    pub conditions: Vec<Condition>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, domain: Domain, conditions: Vec<Condition>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::dim("dataset images", images.shape(), &[0, 0, 0, 0]));
        }
        if images.batch() != labels.len() || labels.len() != conditions.len() {
            return Err(Error::dim("dataset", images.shape(), &[labels.len(), conditions.len()]));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Dataset { images, labels, domain, conditions })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Sorted distinct labels.
    pub fn identities(&self) -> Vec<usize> {
        let mut ids = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Subset by index; an empty selection yields `None` since tensors have
    /// no zero-sized dimensions.
    pub fn subset(&self, idx: &[usize]) -> Option<Dataset> {
        if idx.is_empty() {
            return None;
        }
        Some(Dataset {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            domain: self.domain,
            conditions: idx.iter().map(|&i| self.conditions[i]).collect(),
        })
    }

    /// Concatenates datasets with identical image shapes.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Config("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut conditions = Vec::new();
        for p in parts {
            if p.image_shape() != first.image_shape() {
                return Err(Error::dim("concat", p.image_shape(), first.image_shape()));
            }
            data.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
            conditions.extend_from_slice(&p.conditions);
        }
        let mut shape = first.images.shape().to_vec();
        shape[0] = labels.len();
        Dataset::new(Tensor::new(shape, data)?, labels, first.domain, conditions)
    }

    /// Labels remapped to `0..k` in sorted identity order, plus the mapping.
    pub fn local_labels(&self) -> (Vec<usize>, Vec<usize>) {
        let ids = self.identities();
        let local = self
            .labels
            .iter()
            .map(|l| ids.binary_search(l).expect("label is one of the identities"))
            .collect();
        (local, ids)
    }
}

/// A verification pair: indices into [`PairSet::images`], label 1 for the
/// same identity and 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub images: Dataset,
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn genuine_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == 1).count()
    }

    pub fn impostor_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == 0).count()
    }
}
