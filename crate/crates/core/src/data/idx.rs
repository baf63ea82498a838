use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::ImageStore;
use crate::error::{Error, Result};

const MAGIC_LABELS: u32 = 0x0000_0801;
const MAGIC_IMAGES: u32 = 0x0000_0803;

pub const MNIST_CLASSES: usize = 10;

/// An unsigned-byte IDX tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Length {
            what: "IDX header".into(),
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parse an IDX file holding a 1-D label vector or a 3-D image tensor.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0)?;
    let ndim = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => {
            return Err(Error::Format(format!(
                "bad IDX magic 0x{other:08x} at offset 0 (expected 0x{MAGIC_LABELS:08x} or 0x{MAGIC_IMAGES:08x})"
            )))
        }
    };
    let dims = (0..ndim)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::Length {
            what: format!("IDX payload for dims {dims:?}"),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let magic = match t.dims.len() {
        1 => MAGIC_LABELS,
        3 => MAGIC_IMAGES,
        n => panic!("IDX tensors here are 1-D or 3-D, got {n}-D"),
    };
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    out
}

/// Read a file, transparently inflating gzip content.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip: {e}")).in_file(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Load an MNIST image/label file pair (plain or gzip IDX).
pub fn load_mnist(images: &Path, labels: &Path) -> Result<ImageStore> {
    let img = parse_idx(&read_maybe_gzip(images)?).map_err(|e| e.in_file(images))?;
    let lab = parse_idx(&read_maybe_gzip(labels)?).map_err(|e| e.in_file(labels))?;
    if img.dims.len() != 3 {
        return Err(Error::Format("expected a 3-D image tensor".into()).in_file(images));
    }
    if lab.dims.len() != 1 {
        return Err(Error::Format("expected a 1-D label vector".into()).in_file(labels));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            img.dims[0], lab.dims[0]
        )));
    }
    ImageStore::new(img.dims[1], img.dims[2], 1, MNIST_CLASSES, img.data, lab.data)
}
