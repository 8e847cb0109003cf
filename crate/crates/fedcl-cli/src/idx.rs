//! IDX-format dataset loader (the MNIST file format).
//!
//! Images: big-endian magic `0x00000803`, then three u32 dimensions
//! (count, rows, cols), then `count*rows*cols` unsigned bytes. Labels:
//! magic `0x00000801`, one u32 count, then `count` label bytes. Pixels are
//! scaled into `[0, 1]`.

use std::fs;
use std::path::Path;

use fedcl_core::data::Dataset;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

fn read_u32(bytes: &[u8], pos: usize, what: &'static str) -> Result<u32, IdxError> {
    bytes
        .get(pos..pos + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or(IdxError::Truncated(what))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), IdxError> {
    let magic = read_u32(bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "image rows")? as usize;
    let cols = read_u32(bytes, 12, "image cols")? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(IdxError::Truncated("image payload size overflow"))?;
    let payload = bytes
        .get(16..16 + expected)
        .ok_or(IdxError::Truncated("image payload"))?;
    Ok((count, rows, cols, payload.to_vec()))
}

/// Parses an IDX label file into raw label bytes.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let magic = read_u32(bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let count = read_u32(bytes, 4, "label count")? as usize;
    let payload = bytes
        .get(8..8 + count)
        .ok_or(IdxError::Truncated("label payload"))?;
    Ok(payload.to_vec())
}

/// Builds a dataset from parsed IDX bytes.
pub fn dataset_from_idx_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset, IdxError> {
    let (count, rows, cols, pixels) = parse_images(images)?;
    let label_bytes = parse_labels(labels)?;
    if label_bytes.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: label_bytes.len(),
        });
    }
    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, rows * cols, num_classes)
        .map_err(|e| IdxError::Invalid(e.to_string()))
}

/// Loads an image/label file pair from disk.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    dataset_from_idx_bytes(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent byte-writer: builds IDX files by hand, no shared encoding
    // helpers.
    fn fixture() -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = vec![0, 64, 128, 255, 10, 20, 30, 40];
        let mut images = Vec::new();
        images.extend_from_slice(&[0, 0, 8, 3]); // magic 0x00000803
        images.extend_from_slice(&2u32.to_be_bytes()); // 2 images
        images.extend_from_slice(&2u32.to_be_bytes()); // 2 rows
        images.extend_from_slice(&2u32.to_be_bytes()); // 2 cols
        images.extend_from_slice(&pixels);
        let mut labels = Vec::new();
        labels.extend_from_slice(&[0, 0, 8, 1]); // magic 0x00000801
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[7, 3]);
        (images, labels, pixels)
    }

    #[test]
    fn fixture_roundtrips_byte_exact() {
        let (images, labels, pixels) = fixture();
        let data = dataset_from_idx_bytes(&images, &labels).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.num_features(), 4);
        assert_eq!(data.label(0), 7);
        assert_eq!(data.label(1), 3);
        for (i, &p) in pixels.iter().enumerate() {
            let v = data.feature(i / 4)[i % 4];
            assert_eq!((v * 255.0).round() as u8, p);
            assert_eq!(v, p as f64 / 255.0);
        }
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let (mut images, labels, _) = fixture();
        images[3] = 9;
        match dataset_from_idx_bytes(&images, &labels) {
            Err(IdxError::BadMagic { found, expected }) => {
                assert_eq!(found, 0x0000_0809);
                assert_eq!(expected, IMAGES_MAGIC);
            }
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_reported() {
        let (images, labels, _) = fixture();
        let cut = &images[..images.len() - 2];
        assert!(matches!(
            dataset_from_idx_bytes(cut, &labels),
            Err(IdxError::Truncated(_))
        ));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let (images, mut labels, _) = fixture();
        labels[7] = 3; // claim 3 labels
        labels.push(1);
        assert!(matches!(
            dataset_from_idx_bytes(&images, &labels),
            Err(IdxError::CountMismatch { images: 2, labels: 3 })
        ));
    }
}
