use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::ImageStore;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{gaussian_matrix, rng_from};
use crate::scalar::Scalar;

const LFFT_MAGIC: &[u8; 4] = b"LFFT";
const LFFT_VERSION: u16 = 1;
const LFFT_HEADER_LEN: usize = 4 + 2 + 8 + 4;

/// Frozen feature extractor standing in for a pretrained backbone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    /// Pixels scaled to `[0, 1]`, `F = H·W·C`.
    Flatten,
    /// Flattened pixels times a frozen Gaussian `F_raw × dim` matrix with
    /// entry std `1/√F_raw`.
    RandomProjection { dim: usize, seed: u64 },
    /// Precomputed features in the LFFT layout.
    File(PathBuf),
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Flatten => write!(f, "flatten"),
            FeatureMode::RandomProjection { dim, seed } => {
                write!(f, "random_projection(dim={dim},seed={seed})")
            }
            FeatureMode::File(p) => write!(f, "file({})", p.display()),
        }
    }
}

/// One frozen feature row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore<T> {
    features: Matrix<T>,
    mode: FeatureMode,
}

impl<T: Scalar> FeatureStore<T> {
    pub fn new(features: Matrix<T>, mode: FeatureMode) -> Self {
        Self { features, mode }
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn mode(&self) -> &FeatureMode {
        &self.mode
    }

    pub fn cast<U: Scalar>(&self) -> FeatureStore<U> {
        FeatureStore {
            features: self.features.cast(),
            mode: self.mode.clone(),
        }
    }
}

fn flatten(store: &ImageStore) -> Matrix<f64> {
    Matrix::from_fn(store.len(), store.image_len(), |i, j| {
        f64::from(store.image(i)[j]) / 255.0
    })
}

/// Run the frozen extractor over every image.
pub fn extract_features<T: Scalar>(store: &ImageStore, mode: &FeatureMode) -> Result<FeatureStore<T>> {
    let features = match mode {
        FeatureMode::Flatten => flatten(store).cast(),
        FeatureMode::RandomProjection { dim, seed } => {
            if *dim == 0 {
                return Err(Error::invalid("projection dimension must be positive"));
            }
            let raw = store.image_len();
            let proj: Matrix<f64> =
                gaussian_matrix(raw, *dim, 1.0 / (raw as f64).sqrt(), &mut rng_from(*seed));
            flatten(store).matmul(&proj)?.cast()
        }
        FeatureMode::File(path) => {
            let m = read_feature_file(path)?;
            if m.rows() != store.len() {
                return Err(Error::invalid(format!(
                    "{} holds {} feature rows but the dataset has {} images",
                    path.display(),
                    m.rows(),
                    store.len()
                )));
            }
            m.cast()
        }
    };
    Ok(FeatureStore {
        features,
        mode: mode.clone(),
    })
}

/// Write features as LFFT: magic, u16 version, u64 count, u32 dim, then
/// `count × dim` little-endian `f32`.
pub fn write_feature_file<T: Scalar>(path: &Path, features: &Matrix<T>) -> Result<()> {
    let mut out = Vec::with_capacity(LFFT_HEADER_LEN + 4 * features.len());
    out.extend_from_slice(LFFT_MAGIC);
    out.extend_from_slice(&LFFT_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for v in features.as_slice() {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_feature_file(path: &Path) -> Result<Matrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_features(&bytes).map_err(|e| e.in_file(path))
}

fn decode_features(bytes: &[u8]) -> Result<Matrix<f32>> {
    if bytes.len() < LFFT_HEADER_LEN {
        return Err(Error::Length {
            what: "feature file header".into(),
            expected: LFFT_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != LFFT_MAGIC {
        return Err(Error::Format("feature file magic is not LFFT".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != LFFT_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let count = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    let expected = LFFT_HEADER_LEN + 4 * count * dim;
    if bytes.len() != expected {
        return Err(Error::Length {
            what: format!("feature file with {count}x{dim} values"),
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[LFFT_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(count, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n: usize) -> ImageStore {
        let pixels = (0..n * 4).map(|i| (i * 37 % 256) as u8).collect();
        ImageStore::new(2, 2, 1, 10, pixels, (0..n as u8).collect()).unwrap()
    }

    #[test]
    fn flatten_scales_bytes() {
        let zero = ImageStore::new(2, 2, 1, 10, vec![0; 4], vec![0]).unwrap();
        let f = extract_features::<f32>(&zero, &FeatureMode::Flatten).unwrap();
        assert_eq!(f.dim(), 4);
        assert!(f.matrix().as_slice().iter().all(|&v| v == 0.0));
        let s = store(3);
        let f = extract_features::<f64>(&s, &FeatureMode::Flatten).unwrap();
        assert_eq!(f.matrix().get(1, 2), f64::from(s.image(1)[2]) / 255.0);
    }

    #[test]
    fn projection_is_deterministic() {
        let s = store(5);
        let mode = FeatureMode::RandomProjection { dim: 3, seed: 9 };
        let a = extract_features::<f32>(&s, &mode).unwrap();
        let b = extract_features::<f32>(&s, &mode).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 3);
        let c = extract_features::<f32>(&s, &FeatureMode::RandomProjection { dim: 3, seed: 10 })
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn feature_file_round_trip_and_count_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.lfft");
        let s = store(4);
        let flat = extract_features::<f32>(&s, &FeatureMode::Flatten).unwrap();
        write_feature_file(&path, flat.matrix()).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 18 + 4 * 16);
        let loaded = extract_features::<f32>(&s, &FeatureMode::File(path.clone())).unwrap();
        assert_eq!(loaded.matrix(), flat.matrix());
        assert!(matches!(
            extract_features::<f32>(&store(3), &FeatureMode::File(path)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn truncated_feature_file() {
        let mut bytes = LFFT_MAGIC.to_vec();
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[0; 20]);
        assert!(matches!(decode_features(&bytes), Err(Error::Length { expected: 42, .. })));
    }
}
