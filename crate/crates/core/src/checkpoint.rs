//! Binary parameter files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `LRFL` |
//! | 2 | version (1) |
//! | 4 | feature dim `F` |
//! | 4 | embed dim `E` |
//! | 4 | rank `k` (0 marks a full-rank head) |
//! | rest | factors `A1, B1, A2, B2, A_s, B_s` (or `W1, W2, W_s`), row-major `f32` |

use std::fs;
use std::path::Path;

use crate::cost;
use crate::error::{Error, Result};
use crate::head::{DenseHeadParams, SiameseHeadParams};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"LRFL";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

struct Header {
    feature_dim: usize,
    embed_dim: usize,
    rank: usize,
}

fn encode<'a, T: Scalar>(
    feature_dim: usize,
    embed_dim: usize,
    rank: usize,
    mats: impl IntoIterator<Item = &'a Matrix<T>>,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [feature_dim, embed_dim, rank] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for m in mats {
        for v in m.as_slice() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

fn decode_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            what: "checkpoint header".into(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("checkpoint magic is not LRFL".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let h = Header {
        feature_dim: dim(6),
        embed_dim: dim(10),
        rank: dim(14),
    };
    if h.feature_dim == 0 || h.embed_dim == 0 {
        return Err(Error::Format("checkpoint declares an empty layer".into()));
    }
    Ok(h)
}

fn check_len(bytes: &[u8], params: usize) -> Result<()> {
    let expected = HEADER_LEN + cost::BYTES_PER_PARAM * params;
    if bytes.len() != expected {
        return Err(Error::Length {
            what: "checkpoint".into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Read `shapes` row-major `f32` matrices following the header.
fn decode_matrices<T: Scalar>(bytes: &[u8], shapes: &[(usize, usize)]) -> Result<Vec<Matrix<T>>> {
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::from_f64(f64::from(f32::from_le_bytes(c.try_into().unwrap()))));
    shapes
        .iter()
        .map(|&(r, c)| Matrix::from_vec(r, c, values.by_ref().take(r * c).collect()))
        .collect()
}

pub fn encode_checkpoint<T: Scalar>(params: &SiameseHeadParams<T>) -> Vec<u8> {
    encode(
        params.feature_dim(),
        params.embed_dim(),
        params.rank(),
        params.factors(),
    )
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<SiameseHeadParams<T>> {
    let h = decode_header(bytes)?;
    if h.rank == 0 {
        return Err(Error::Format("checkpoint holds a full-rank head".into()));
    }
    let (f, e, k) = (h.feature_dim, h.embed_dim, h.rank);
    check_len(bytes, cost::head_param_count(f, e, k))?;
    let shapes = [(f, k), (k, e), (f, k), (k, e), (e, k), (k, 1)];
    let m: [Matrix<T>; 6] = decode_matrices(bytes, &shapes)?
        .try_into()
        .expect("six shapes");
    SiameseHeadParams::from_factors(m)
}

pub fn encode_dense_checkpoint<T: Scalar>(params: &DenseHeadParams<T>) -> Vec<u8> {
    encode(params.feature_dim(), params.embed_dim(), 0, params.weights())
}

pub fn decode_dense_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<DenseHeadParams<T>> {
    let h = decode_header(bytes)?;
    if h.rank != 0 {
        return Err(Error::Format(format!("checkpoint holds a rank-{} head", h.rank)));
    }
    let (f, e) = (h.feature_dim, h.embed_dim);
    check_len(bytes, cost::dense_head_param_count(f, e))?;
    let m: [Matrix<T>; 3] = decode_matrices(bytes, &[(f, e), (f, e), (e, 1)])?
        .try_into()
        .expect("three shapes");
    DenseHeadParams::from_weights(m)
}

pub fn save_checkpoint<T: Scalar>(params: &SiameseHeadParams<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<SiameseHeadParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}

/// Size of the weight section of an encoded checkpoint.
pub fn weight_section_len(bytes: &[u8]) -> usize {
    bytes.len().saturating_sub(HEADER_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = SiameseHeadParams::<f32>::init(12, 5, 3, 4).unwrap();
        let bytes = encode_checkpoint(&p);
        assert_eq!(bytes.len(), 18 + 4 * cost::head_param_count(12, 5, 3));
        assert_eq!(decode_checkpoint::<f32>(&bytes).unwrap(), p);

        let d = DenseHeadParams::<f32>::init(12, 5, 4).unwrap();
        let bytes = encode_dense_checkpoint(&d);
        assert_eq!(bytes.len(), 18 + 4 * cost::dense_head_param_count(12, 5));
        assert_eq!(decode_dense_checkpoint::<f32>(&bytes).unwrap(), d);
        assert!(decode_checkpoint::<f32>(&bytes).is_err());
    }

    #[test]
    fn truncated_file_reports_sizes() {
        let p = SiameseHeadParams::<f32>::init(6, 4, 2, 0).unwrap();
        let bytes = encode_checkpoint(&p);
        let err = decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Length {
                expected, actual, ..
            } => assert_eq!((expected, actual), (bytes.len(), bytes.len() - 3)),
            other => panic!("unexpected {other}"),
        }
        assert!(err_msg(&bytes[..bytes.len() - 3]).contains("expected"));
    }

    fn err_msg(b: &[u8]) -> String {
        decode_checkpoint::<f32>(b).unwrap_err().to_string()
    }

    #[test]
    fn bad_magic_and_version() {
        let p = SiameseHeadParams::<f32>::init(6, 4, 2, 0).unwrap();
        let mut bytes = encode_checkpoint(&p);
        bytes[4] = 2;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format(_))));
    }
}
