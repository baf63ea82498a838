use std::path::Path;

use super::{read_maybe_gzip, ImageStore};
use crate::error::{Error, Result};

pub const CIFAR10_IMAGE_LEN: usize = 3 * 32 * 32;
pub const CIFAR10_RECORD_LEN: usize = 1 + CIFAR10_IMAGE_LEN;
const CIFAR10_CLASSES: usize = 10;

/// Parse concatenated CIFAR-10 binary records.
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<ImageStore> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR10_RECORD_LEN) {
        if bytes.len() >= 4 && bytes[..3] == [0, 0, 8] {
            return Err(Error::Format(format!(
                "expected CIFAR-10 records but found IDX magic 0x{:08x} at offset 0",
                u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
            )));
        }
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a positive multiple of {CIFAR10_RECORD_LEN}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR10_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR10_IMAGE_LEN);
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD_LEN).enumerate() {
        if usize::from(rec[0]) >= CIFAR10_CLASSES {
            return Err(Error::Format(format!(
                "label byte {} at offset {} is not a CIFAR-10 class",
                rec[0],
                i * CIFAR10_RECORD_LEN
            )));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    ImageStore::new(32, 32, 3, CIFAR10_CLASSES, pixels, labels)
}

/// Load and concatenate one or more batch files.
pub fn load_cifar10(paths: &[impl AsRef<Path>]) -> Result<ImageStore> {
    let mut all = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = read_maybe_gzip(p)?;
        // validate each file on its own so errors name the right path
        parse_cifar10_bin(&bytes).map_err(|e| e.in_file(p))?;
        all.extend_from_slice(&bytes);
    }
    parse_cifar10_bin(&all)
}
