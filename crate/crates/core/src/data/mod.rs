//! Dataset ingestion, frozen features, pair construction and client shards.

mod cifar;
mod features;
mod idx;
mod pairs;
mod partition;

use crate::error::{Error, Result};

pub use cifar::{load_cifar10, parse_cifar10_bin, CIFAR10_RECORD_LEN};
pub use features::{
    extract_features, read_feature_file, write_feature_file, FeatureMode, FeatureStore,
};
pub use idx::{encode_idx, load_mnist, parse_idx, read_maybe_gzip, IdxTensor};
pub use pairs::{build_pairs, PairExample};
pub use partition::{partition_iid, partition_noniid, split_train_test, ClientShard};

/// Decoded images with class labels.
///
/// Pixels are stored per image as `height × width × channels` bytes in the
/// source file's native order (row-major for MNIST, channel-major for
/// CIFAR-10).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageStore {
    height: usize,
    width: usize,
    channels: usize,
    num_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl ImageStore {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        num_classes: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 {
            return Err(Error::invalid("images must have a positive size"));
        }
        if pixels.len() != per * labels.len() {
            return Err(Error::invalid(format!(
                "{} pixel bytes for {} images of {per} bytes",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::invalid(format!(
                "label {l} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            num_classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Bytes per image, i.e. the flattened feature dimension.
    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` images (or all of them if there are fewer).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Image tensor as IDX (magic 0x0803) bytes.
    pub fn to_idx_images(&self) -> Vec<u8> {
        encode_idx(&IdxTensor {
            dims: vec![self.len(), self.height, self.width],
            data: self.pixels.clone(),
        })
    }

    /// Label vector as IDX (magic 0x0801) bytes.
    pub fn to_idx_labels(&self) -> Vec<u8> {
        encode_idx(&IdxTensor {
            dims: vec![self.len()],
            data: self.labels.clone(),
        })
    }

    /// CIFAR-10 binary records (label byte + 3072 pixel bytes each).
    pub fn to_cifar10_bin(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * (1 + self.image_len()));
        for i in 0..self.len() {
            out.push(self.labels[i]);
            out.extend_from_slice(self.image(i));
        }
        out
    }
}
