//! IDX-format loader for the MNIST image/label files.
//!
//! Big-endian headers: magic 0x00000803 for images (count, rows, cols),
//! 0x00000801 for labels (count). Pixels are scaled to `[0, 1]` by 255.

use std::fs;
use std::path::Path;

use crate::tasks::{Dataset, TaskError};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, TaskError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(TaskError::Truncated {
            path: path.display().to_string(),
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn read_file(path: &Path) -> Result<Vec<u8>, TaskError> {
    fs::read(path).map_err(|e| TaskError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load an MNIST-style IDX image/label pair into a [`Dataset`].
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, TaskError> {
    let image_bytes = read_file(images_path)?;
    let magic = read_u32_be(&image_bytes, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(TaskError::BadMagic {
            path: images_path.display().to_string(),
            expected: IMAGES_MAGIC,
            got: magic,
        });
    }
    let n_images = read_u32_be(&image_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&image_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&image_bytes, 12, images_path)? as usize;
    let n_features = rows * cols;
    let expected = 16 + n_images * n_features;
    if image_bytes.len() != expected {
        return Err(TaskError::Truncated {
            path: images_path.display().to_string(),
            expected,
            actual: image_bytes.len(),
        });
    }

    let label_bytes = read_file(labels_path)?;
    let magic = read_u32_be(&label_bytes, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(TaskError::BadMagic {
            path: labels_path.display().to_string(),
            expected: LABELS_MAGIC,
            got: magic,
        });
    }
    let n_labels = read_u32_be(&label_bytes, 4, labels_path)? as usize;
    let expected = 8 + n_labels;
    if label_bytes.len() != expected {
        return Err(TaskError::Truncated {
            path: labels_path.display().to_string(),
            expected,
            actual: label_bytes.len(),
        });
    }
    if n_images != n_labels {
        return Err(TaskError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let inputs: Vec<f64> = image_bytes[16..]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(inputs, labels, n_features, n_classes.max(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_images(n: u32, rows: u32, cols: u32, pixels: &[u8], magic: u32) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
        f
    }

    fn write_labels(labels: &[u8], magic: u32) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        f
    }

    #[test]
    fn loads_a_small_valid_pair() {
        let pixels: Vec<u8> = (0..3 * 4).map(|i| (i * 20) as u8).collect();
        let images = write_images(3, 2, 2, &pixels, IMAGES_MAGIC);
        let labels = write_labels(&[0, 5, 9], LABELS_MAGIC);
        let data = load_mnist_idx(images.path(), labels.path()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.n_features(), 4);
        assert_eq!(data.label(1), 5);
        assert_eq!(data.input(0)[1], 20.0 / 255.0);
    }

    #[test]
    fn full_intensity_pixel_scales_to_exactly_one() {
        let images = write_images(1, 1, 2, &[255, 0], IMAGES_MAGIC);
        let labels = write_labels(&[3], LABELS_MAGIC);
        let data = load_mnist_idx(images.path(), labels.path()).unwrap();
        assert_eq!(data.input(0), &[1.0, 0.0]);
    }

    #[test]
    fn bad_magic_is_reported() {
        let images = write_images(1, 2, 2, &[0; 4], 0xdead_beef);
        let labels = write_labels(&[1], LABELS_MAGIC);
        let err = load_mnist_idx(images.path(), labels.path()).unwrap_err();
        assert!(matches!(err, TaskError::BadMagic { got: 0xdead_beef, .. }));
    }

    #[test]
    fn truncation_names_expected_and_actual_byte_counts() {
        // Claims 4 images of 2x2 but carries pixels for only 2.
        let images = write_images(4, 2, 2, &[7; 8], IMAGES_MAGIC);
        let labels = write_labels(&[0, 1, 2, 3], LABELS_MAGIC);
        let err = load_mnist_idx(images.path(), labels.path()).unwrap_err();
        match err {
            TaskError::Truncated {
                expected, actual, ..
            } => {
                assert_eq!(expected, 16 + 16);
                assert_eq!(actual, 16 + 8);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn image_label_count_mismatch_is_rejected() {
        let images = write_images(2, 1, 1, &[1, 2], IMAGES_MAGIC);
        let labels = write_labels(&[0, 1, 2], LABELS_MAGIC);
        let err = load_mnist_idx(images.path(), labels.path()).unwrap_err();
        assert!(matches!(
            err,
            TaskError::CountMismatch {
                images: 2,
                labels: 3
            }
        ));
    }
}
