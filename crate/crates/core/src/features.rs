//! Per-detection node features and the `HEGF` feature file.
//!
//! Layout of a `.hegf` file (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "HEGF"
//! 4       4           version (u32) = 1
//! 8       8           node count N (u64)
//! 16      8           feature dim F (u64)
//! 24      4·N·F       row-major f32 values
//! ```
//!
//! The `.idx` sidecar is UTF-8 text: a `frame_index\tobject_id` header and
//! then one line per row of the feature file, in row order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::binio::{put_u32, put_u64, ByteReader};
use crate::error::{HegError, Result};
use crate::numerics::Matrix;

pub const HEGF_MAGIC: &[u8; 4] = b"HEGF";
pub const HEGF_VERSION: u32 = 1;
const HEGF_HEADER_LEN: usize = 24;

/// Looks up the node feature row of an object on a given frame.
pub trait FeatureSource {
    fn feature_dim(&self) -> usize;
    fn feature(&self, frame_index: usize, object_id: u64) -> Option<&[f64]>;
}

/// Feature matrix plus the `(frame_index, object_id)` key of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    features: Matrix,
    keys: Vec<(usize, u64)>,
    rows_by_key: HashMap<(usize, u64), usize>,
}

impl FeatureTable {
    pub fn new(features: Matrix, keys: Vec<(usize, u64)>) -> Result<Self> {
        if features.rows() != keys.len() {
            return Err(HegError::Dimension(format!(
                "{} feature rows but {} index keys",
                features.rows(),
                keys.len()
            )));
        }
        let mut rows_by_key = HashMap::with_capacity(keys.len());
        for (row, key) in keys.iter().enumerate() {
            if rows_by_key.insert(*key, row).is_some() {
                return Err(HegError::Ingestion(format!(
                    "duplicate feature key (frame {}, object {})",
                    key.0, key.1
                )));
            }
        }
        Ok(Self {
            features,
            keys,
            rows_by_key,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.features
    }

    pub fn keys(&self) -> &[(usize, u64)] {
        &self.keys
    }

    /// Companion index path: `x.hegf` → `x.idx`.
    pub fn index_path(feature_path: &Path) -> PathBuf {
        feature_path.with_extension("idx")
    }

    pub fn write(&self, feature_path: &Path) -> Result<()> {
        write_feature_file(feature_path, &self.features)?;
        let mut text = String::from("frame_index\tobject_id\n");
        for (frame, object) in &self.keys {
            text.push_str(&format!("{frame}\t{object}\n"));
        }
        let idx = Self::index_path(feature_path);
        std::fs::write(&idx, text).map_err(|e| HegError::io(&idx, e))
    }

    pub fn read(feature_path: &Path) -> Result<Self> {
        let features = read_feature_file(feature_path)?;
        let idx = Self::index_path(feature_path);
        let text = std::fs::read_to_string(&idx).map_err(|e| HegError::io(&idx, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "frame_index\tobject_id")) => {}
            _ => {
                return Err(HegError::Ingestion(format!(
                    "{}: missing 'frame_index\\tobject_id' header",
                    idx.display()
                )))
            }
        }
        let mut keys = Vec::with_capacity(features.rows());
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = || HegError::Ingestion(format!("{}:{}: malformed index line {line:?}", idx.display(), lineno + 1));
            let (frame, object) = line.split_once('\t').ok_or_else(bad)?;
            keys.push((
                frame.parse().map_err(|_| bad())?,
                object.parse().map_err(|_| bad())?,
            ));
        }
        Self::new(features, keys)
    }
}

impl FeatureSource for FeatureTable {
    fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    fn feature(&self, frame_index: usize, object_id: u64) -> Option<&[f64]> {
        self.rows_by_key
            .get(&(frame_index, object_id))
            .map(|&r| self.features.row(r))
    }
}

/// Serializes a feature matrix as `HEGF`. Values are stored as f32; anything
/// non-finite (before or after narrowing) is rejected.
pub fn encode_features(features: &Matrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEGF_HEADER_LEN + 4 * features.len());
    out.extend_from_slice(HEGF_MAGIC);
    put_u32(&mut out, HEGF_VERSION);
    put_u64(&mut out, features.rows() as u64);
    put_u64(&mut out, features.cols() as u64);
    for (i, &v) in features.data().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(HegError::Numeric(format!(
                "feature value {v} at row {}, column {} is not a finite f32",
                i / features.cols().max(1),
                i % features.cols().max(1)
            )));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Matrix> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(HEGF_MAGIC)?;
    let version = r.u32("version")?;
    if version != HEGF_VERSION {
        return Err(HegError::Format {
            offset: 4,
            message: format!("unsupported HEGF version {version}"),
        });
    }
    let rows = r.usize("node count")?;
    let cols = r.usize("feature dim")?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| r.error("node count × feature dim overflows"))?;
    r.require(count, 4, "feature values")?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let b = r.take(4, "feature value")?;
        data.push(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64);
    }
    r.finish()?;
    Matrix::from_vec(rows, cols, data)
}

pub fn write_feature_file(path: &Path, features: &Matrix) -> Result<()> {
    let bytes = encode_features(features)?;
    std::fs::write(path, bytes).map_err(|e| HegError::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| HegError::io(path, e))?;
    decode_features(&bytes).map_err(|e| match e {
        HegError::Format { offset, message } => HegError::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, unit_f64};

    fn f32_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        let data = (0..rows * cols)
            .map(|_| (unit_f64(&mut rng) * 8.0 - 4.0) as f32 as f64)
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = f32_matrix(10, 16, 3);
        let back = decode_features(&encode_features(&m).unwrap()).unwrap();
        assert_eq!(m.shape(), back.shape());
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_features(&Matrix::zeros(2, 1024)).unwrap();
        assert_eq!(&bytes[..4], b"HEGF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 1024);
        assert_eq!(bytes.len(), 24 + 2 * 1024 * 4);
        assert_eq!(decode_features(&bytes).unwrap().cols(), 1024);
    }

    #[test]
    fn truncation_reports_expected_and_actual_length() {
        let bytes = encode_features(&f32_matrix(3, 4, 1)).unwrap();
        let err = decode_features(&bytes[..bytes.len() - 5]).unwrap_err();
        match err {
            HegError::Format { offset, message } => {
                assert_eq!(offset, 24);
                assert!(message.contains("expected 48 bytes, found 43"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let mut bytes = encode_features(&f32_matrix(1, 1, 1)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes), Err(HegError::Format { offset: 0, .. })));
        let mut bytes = encode_features(&f32_matrix(1, 1, 1)).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_features(&bytes), Err(HegError::Format { offset: 4, .. })));
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(encode_features(&Matrix::filled(1, 1, f64::NAN)).is_err());
        assert!(encode_features(&Matrix::filled(1, 1, 1e300)).is_err());
    }

    #[test]
    fn table_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v0.hegf");
        let table = FeatureTable::new(f32_matrix(3, 2, 5), vec![(0, 1), (0, 4), (5, 1)]).unwrap();
        table.write(&path).unwrap();
        let back = FeatureTable::read(&path).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.feature(5, 1), Some(table.matrix().row(2)));
        assert_eq!(back.feature(5, 2), None);
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert!(FeatureTable::new(Matrix::zeros(2, 1), vec![(0, 1), (0, 1)]).is_err());
    }
}
